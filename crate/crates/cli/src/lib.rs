//! Command-line front end: validate, score, audit, adjust, matrix, simulate
//! and report.
//!
//! Exit codes: 0 success, 1 data or validation failure, 2 statistical
//! failure (separation, rank deficiency, degenerate groups), 3 usage error.
//! Failures print one line `error: <kind>: <message>` to standard error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use slu_audit::bias_tests::{
    adjustment_test, chi2_contingency, full_adjustment_matrix, one_way_anova, univariate_audit, ResultsFile,
    TestRecord,
};
use slu_audit::data_model::{validate_record_with, AnovaUnit, AuditConfig, DemographicSchema, LocatedViolation, Variable};
use slu_audit::ingestion::{
    check_manifest_text, generate_synthetic, join_hypotheses, load_hypotheses, DatasetManifest, LoadOptions,
    SyntheticSpec,
};
use slu_audit::metrics::{aggregate, aggregation_to_csv, score_manifest, scores_from_jsonl, scores_to_jsonl, UtteranceScore};
use slu_audit::report::{export_boxplot_data, render_markdown, AuditReport};
use slu_audit::{Error, ErrorClass};

#[derive(Debug, Parser)]
#[command(name = "slu-audit", version, about = "Demographic bias audits of spoken language understanding outputs")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a manifest against the record schema.
    Validate(ValidateArgs),
    /// Compute per-utterance scores, or per-group aggregates with --format csv.
    Score(ScoreArgs),
    /// Univariate logit, chi-squared and ANOVA tests for each --variable.
    Audit(AuditArgs),
    /// One likelihood-ratio adjustment test.
    Adjust(AdjustArgs),
    /// Adjustment tests for every ordered pair of variables.
    Matrix(MatrixArgs),
    /// Generate a synthetic manifest from a cohort spec.
    Simulate(SimulateArgs),
    /// Assemble a report from a manifest, scores and result files.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Markdown,
    Csv,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Manifest, score export or results file; the kind is detected from the
    /// content. Repeatable.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Line-delimited hypotheses joined onto the manifest.
    #[arg(long)]
    hypotheses: Option<PathBuf>,
    /// Demographic schema (defaults to the bundled one).
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON audit configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Reference level, as VAR=LEVEL. Repeatable.
    #[arg(long, value_name = "VAR=LEVEL")]
    reference: Vec<String>,
    #[arg(long)]
    or_shift_threshold: Option<f64>,
    #[arg(long, value_enum)]
    anova_unit: Option<AnovaUnitArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AnovaUnitArg {
    Utterance,
    Speaker,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Output file (standard output when absent); a directory for CSV reports.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Grouping variables for the CSV aggregate. Repeatable.
    #[arg(long)]
    variable: Vec<String>,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: OutputArgs,
    #[arg(long, required = true)]
    variable: Vec<String>,
}

#[derive(Debug, Args)]
struct AdjustArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: OutputArgs,
    #[arg(long)]
    target: String,
    #[arg(long)]
    adjust_by: String,
}

#[derive(Debug, Args)]
struct MatrixArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Variables to cross (all schema variables when absent). Repeatable.
    #[arg(long)]
    variable: Vec<String>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the seed stored in the cohort file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Variables for the CSV box-plot bundle. Repeatable.
    #[arg(long)]
    variable: Vec<String>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    let first = e.to_string();
                    let line = first.lines().next().unwrap_or("invalid arguments");
                    eprintln!("error: usage: {}", line.trim_start_matches("error: "));
                    3
                }
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let message = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: {}: {}", e.kind(), message);
            match e.class() {
                ErrorClass::Data => 1,
                ErrorClass::Statistical => 2,
                ErrorClass::Usage => 3,
            }
        }
    }
}

type Result<T> = slu_audit::Result<T>;

fn usage(message: impl Into<String>) -> Error {
    Error::InvalidConfig(message.into())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Validate(a) => validate(a),
        Command::Score(a) => score(a),
        Command::Audit(a) => audit(a),
        Command::Adjust(a) => adjust(a),
        Command::Matrix(a) => matrix(a),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => report(a),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn load_schema(path: Option<&Path>) -> Result<DemographicSchema> {
    match path {
        Some(p) => DemographicSchema::load(p),
        None => Ok(DemographicSchema::default()),
    }
}

fn parse_variables(names: &[String]) -> Result<Vec<Variable>> {
    names.iter().map(|n| n.parse()).collect()
}

enum InputKind {
    Manifest,
    Scores,
    Results,
}

fn sniff(text: &str, path: &Path) -> Result<InputKind> {
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let unknown = || Error::Parse { line: 1, message: format!("cannot tell what kind of input {} is", path.display()) };
    match serde_json::from_str::<serde_json::Value>(first) {
        Ok(v) if v.get("reference_parse").is_some() => Ok(InputKind::Manifest),
        Ok(v) if v.get("em").is_some() && v.get("utterance_id").is_some() => Ok(InputKind::Scores),
        // A pretty-printed results file does not fit on one line.
        _ => match serde_json::from_str::<serde_json::Value>(text) {
            Ok(v) if v.get("results").is_some() => Ok(InputKind::Results),
            Ok(_) => Err(unknown()),
            Err(e) => Err(Error::Parse { line: e.line(), message: format!("{}: {e}", path.display()) }),
        },
    }
}

struct Inputs {
    schema: DemographicSchema,
    manifest: Option<DatasetManifest>,
    scores: Option<Vec<UtteranceScore>>,
    results: Vec<ResultsFile>,
}

impl Inputs {
    fn load(args: &InputArgs) -> Result<Self> {
        let schema = load_schema(args.schema.as_deref())?;
        let mut inputs = Inputs { schema, manifest: None, scores: None, results: Vec::new() };
        for path in &args.input {
            let text = read(path)?;
            match sniff(&text, path)? {
                InputKind::Manifest => {
                    if inputs.manifest.is_some() {
                        return Err(usage("more than one manifest given"));
                    }
                    // Responses may come from --hypotheses or a score file.
                    let opts = LoadOptions { require_response: false };
                    let (records, report) = check_manifest_text(&text, &inputs.schema, opts)?;
                    if let Some(id) = report.duplicate_ids.into_iter().next() {
                        return Err(Error::DuplicateId(id));
                    }
                    if !report.violations.is_empty() {
                        return Err(Error::SchemaViolation(report.violations));
                    }
                    inputs.manifest = Some(DatasetManifest::new(
                        records,
                        inputs.schema.schema_version.clone(),
                        path.display().to_string(),
                    ));
                }
                InputKind::Scores => {
                    if inputs.scores.is_some() {
                        return Err(usage("more than one score file given"));
                    }
                    inputs.scores = Some(scores_from_jsonl(&text)?);
                }
                InputKind::Results => inputs.results.push(ResultsFile::from_json(&text)?),
            }
        }
        if let Some(h) = &args.hypotheses {
            let manifest = inputs.manifest.as_ref().ok_or_else(|| usage("--hypotheses needs a manifest input"))?;
            inputs.manifest = Some(join_hypotheses(manifest, &load_hypotheses(h)?)?);
        }
        Ok(inputs)
    }

    fn manifest(&self) -> Result<&DatasetManifest> {
        self.manifest.as_ref().ok_or_else(|| usage("a manifest --input is required"))
    }

    /// Supplied scores, or scores computed from the manifest.
    fn scores(&self) -> Result<Vec<UtteranceScore>> {
        match &self.scores {
            Some(s) => Ok(s.clone()),
            None => score_manifest(self.manifest()?),
        }
    }
}

fn resolve_config(args: &ConfigArgs, schema: &DemographicSchema) -> Result<AuditConfig> {
    let mut config = match &args.config {
        Some(p) => serde_json::from_str::<AuditConfig>(&read(p)?)
            .map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => AuditConfig::for_schema(schema),
    };
    for var in schema.variables() {
        let reference = schema.levels(var)?.reference.clone();
        config.reference_levels.entry(var).or_insert(reference);
    }
    if let Some(alpha) = args.alpha {
        config.alpha = alpha;
    }
    if let Some(t) = args.or_shift_threshold {
        config.or_shift_threshold = t;
    }
    if let Some(unit) = args.anova_unit {
        config.anova_unit = match unit {
            AnovaUnitArg::Utterance => AnovaUnit::Utterance,
            AnovaUnitArg::Speaker => AnovaUnit::Speaker,
        };
    }
    for spec in &args.reference {
        let (var, level) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--reference expects VAR=LEVEL, got {spec:?}")))?;
        let var: Variable = var.parse()?;
        if schema.levels(var)?.index_of(level).is_none() {
            return Err(usage(format!("{level:?} is not a level of {var}")));
        }
        config.reference_levels.insert(var, level.to_string());
    }
    for var in schema.variables() {
        config.reference_for(var, schema)?;
    }
    config.validate()?;
    Ok(config)
}

fn check_format(format: Option<Format>, allowed: &[Format], command: &str) -> Result<Format> {
    let f = format.unwrap_or(allowed[0]);
    if allowed.contains(&f) {
        Ok(f)
    } else {
        Err(usage(format!("{command} does not support --format {:?}", f).to_lowercase()))
    }
}

fn validate(args: ValidateArgs) -> Result<()> {
    let schema = load_schema(args.input.schema.as_deref())?;
    let [path] = args.input.input.as_slice() else {
        return Err(usage("validate takes exactly one --input"));
    };
    let text = read(path)?;
    let joining = args.input.hypotheses.is_some();
    let (records, mut report) = check_manifest_text(&text, &schema, LoadOptions { require_response: !joining })?;
    if let Some(h) = &args.input.hypotheses {
        if report.is_clean() {
            let manifest = DatasetManifest::new(records, schema.schema_version.clone(), path.display().to_string());
            let joined = join_hypotheses(&manifest, &load_hypotheses(h)?)?;
            for (i, r) in joined.records.iter().enumerate() {
                for v in validate_record_with(r, &schema, true) {
                    report.violations.push(LocatedViolation {
                        line: i + 1,
                        utterance_id: Some(r.utterance_id.clone()),
                        violation: v,
                    });
                }
            }
        }
    }
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_output(args.output.as_deref(), &json)?;
    if let Some(id) = report.duplicate_ids.first() {
        return Err(Error::DuplicateId(id.clone()));
    }
    if !report.violations.is_empty() {
        return Err(Error::SchemaViolation(report.violations));
    }
    Ok(())
}

fn score(args: ScoreArgs) -> Result<()> {
    let format = check_format(args.output.format, &[Format::Json, Format::Csv], "score")?;
    let inputs = Inputs::load(&args.input)?;
    let scores = inputs.scores()?;
    let text = match format {
        Format::Csv => {
            let vars = parse_variables(&args.variable)?;
            if vars.is_empty() {
                return Err(usage("score --format csv needs at least one --variable"));
            }
            aggregation_to_csv(&aggregate(&scores, inputs.manifest()?, &vars, &inputs.schema)?)
        }
        _ => scores_to_jsonl(&scores),
    };
    write_output(args.output.output.as_deref(), &text)
}

/// Writes results as JSON, or as a markdown report over the same inputs.
fn emit_results(
    inputs: &Inputs,
    scores: &[UtteranceScore],
    config: &AuditConfig,
    results: Vec<TestRecord>,
    output: &OutputArgs,
    command: &str,
) -> Result<()> {
    let format = check_format(output.format, &[Format::Json, Format::Markdown], command)?;
    let text = match format {
        Format::Markdown => {
            let report = AuditReport::assemble(inputs.manifest()?, scores, &results, config, &inputs.schema)?;
            render_markdown(&report)
        }
        _ => ResultsFile::new(config, results).to_json(),
    };
    write_output(output.output.as_deref(), &text)
}

fn audit(args: AuditArgs) -> Result<()> {
    let inputs = Inputs::load(&args.input)?;
    let config = resolve_config(&args.config, &inputs.schema)?;
    let vars = parse_variables(&args.variable)?;
    let manifest = inputs.manifest()?;
    let scores = inputs.scores()?;
    let mut results = Vec::new();
    for var in vars {
        let a = univariate_audit(manifest, &scores, var, &inputs.schema, &config)?;
        results.push(TestRecord::from_univariate(&a, config.alpha));
        let c = chi2_contingency(manifest, &scores, var, &inputs.schema, &config)?;
        results.push(TestRecord::from_contingency(&c, config.alpha));
        let f = one_way_anova(manifest, &scores, var, &inputs.schema, &config)?;
        results.push(TestRecord::from_anova(&f, config.alpha));
    }
    emit_results(&inputs, &scores, &config, results, &args.output, "audit")
}

fn adjust(args: AdjustArgs) -> Result<()> {
    let inputs = Inputs::load(&args.input)?;
    let config = resolve_config(&args.config, &inputs.schema)?;
    let target: Variable = args.target.parse()?;
    let adjusting: Variable = args.adjust_by.parse()?;
    let scores = inputs.scores()?;
    let v = adjustment_test(inputs.manifest()?, &scores, target, adjusting, &inputs.schema, &config)?;
    let results = vec![TestRecord::from_adjustment(&v, config.alpha)];
    emit_results(&inputs, &scores, &config, results, &args.output, "adjust")
}

fn matrix(args: MatrixArgs) -> Result<()> {
    let inputs = Inputs::load(&args.input)?;
    let config = resolve_config(&args.config, &inputs.schema)?;
    let vars = if args.variable.is_empty() {
        inputs.schema.variables().collect()
    } else {
        parse_variables(&args.variable)?
    };
    let scores = inputs.scores()?;
    let verdicts = full_adjustment_matrix(inputs.manifest()?, &scores, &vars, &inputs.schema, &config)?;
    let results = verdicts.iter().map(|v| TestRecord::from_adjustment(v, config.alpha)).collect();
    emit_results(&inputs, &scores, &config, results, &args.output, "matrix")
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut spec = SyntheticSpec::load(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let manifest = generate_synthetic(&spec)?;
    write_output(args.output.as_deref(), &manifest.to_jsonl())
}

fn report(args: ReportArgs) -> Result<()> {
    let format = check_format(args.output.format, &[Format::Markdown, Format::Json, Format::Csv], "report")?;
    let inputs = Inputs::load(&args.input)?;
    let manifest = inputs.manifest()?;
    let scores = inputs.scores()?;
    if format == Format::Csv {
        let dir = args
            .output
            .output
            .as_deref()
            .ok_or_else(|| usage("report --format csv needs --output DIRECTORY"))?;
        let vars = if args.variable.is_empty() {
            inputs
                .schema
                .variables()
                .filter(|&v| manifest.records.iter().any(|r| r.tags.get(v).is_some()))
                .collect()
        } else {
            parse_variables(&args.variable)?
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (var, csv) in export_boxplot_data(&scores, manifest, &vars, &inputs.schema)? {
            let path = dir.join(format!("boxplot_{var}.csv"));
            fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        }
        return Ok(());
    }

    // Results carry the configuration they were computed with.
    let config = match inputs.results.first() {
        Some(first) => {
            if inputs.results.iter().any(|r| r.config != first.config) {
                return Err(usage("results files were produced with different configurations"));
            }
            first.config.clone()
        }
        None => resolve_config(&args.config, &inputs.schema)?,
    };
    let results: Vec<TestRecord> = inputs.results.iter().flat_map(|r| r.results.iter().cloned()).collect();
    let report = AuditReport::assemble(manifest, &scores, &results, &config, &inputs.schema)?;
    let text = match format {
        Format::Json => report.to_json(),
        _ => render_markdown(&report),
    };
    write_output(args.output.output.as_deref(), &text)
}
