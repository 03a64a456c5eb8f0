//! Acceptance suite. Prints one line per criterion and exits non-zero if
//! any blocking criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use slu_audit::bias_tests::{adjustment_test, anova_groups, pearson_chi2, univariate_audit, Verdict};
use slu_audit::data_model::{AuditConfig, DemographicSchema, Parse, Slot, Variable};
use slu_audit::fixtures::{confounded_spec, null_spec, two_by_two};
use slu_audit::glm::{build_design, fit, odds_ratio, score_vector, DesignMatrix, ModelSpec};
use slu_audit::ingestion::{generate_synthetic, SyntheticRng, SyntheticSpec};
use slu_audit::metrics::{exact_match, score_manifest, word_error_counts, WordErrors};
use slu_audit::report::{render_markdown, AuditReport};
use slu_audit::specfun::{chi2_quantile, student_t_two_sided};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Runs `f`, folding a time budget into the verdict.
fn timed(budget: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let elapsed = start.elapsed();
    if elapsed > budget {
        o.pass = false;
        o.detail.push_str(&format!("; over time budget {budget:?}"));
    }
    o.detail.push_str(&format!(" [{:.2}s]", elapsed.as_secs_f64()));
    o
}

// 1. Chi-squared critical values.
fn chi2_quantiles() -> Outcome {
    let quoted = [(1.0, 3.84), (3.0, 7.81), (4.0, 9.49), (5.0, 11.07), (7.0, 14.07)];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (df, q) in quoted {
        let got = chi2_quantile(0.95, df).unwrap();
        worst = worst.max((got - q).abs());
        parts.push(format!("df{df}={got:.4}"));
    }
    outcome(worst <= 0.005, format!("{}; max deviation {worst:.5} (tol 0.005)", parts.join(" ")))
}

// 2. Closed-form 2x2 fixture.
fn two_by_two_oracle() -> Outcome {
    let m = two_by_two();
    let s = score_manifest(&m).unwrap();
    let schema = DemographicSchema::default();
    let config = AuditConfig::default();
    let spec = ModelSpec::new(&[Variable::Gender], &config, &schema).unwrap();
    let design = build_design(&m, &s, &spec, &schema).unwrap();
    let model = fit(&design, &config).unwrap();
    let or = odds_ratio(&model, 1, &config).unwrap();
    let audit = univariate_audit(&m, &s, Variable::Gender, &schema, &config).unwrap();
    let (pearson, _, _) = pearson_chi2(&[[70, 30], [40, 60]]).unwrap();
    let checks = [
        ("OR", or.or_value, 3.5, 1e-6),
        ("SE", or.std_error, 0.29881, 1e-4),
        ("LLR", audit.global_test.statistic, 18.48, 0.01),
        ("Pearson", pearson, 18.18, 0.01),
    ];
    let pass = checks.iter().all(|(_, got, want, tol)| (got - want).abs() <= *tol);
    let detail = checks
        .iter()
        .map(|(name, got, want, tol)| format!("{name} {got:.6} (target {want} +/- {tol})"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, detail)
}

// 3. MLE against an exhaustive grid.

/// log-likelihood contribution of one covariate pattern as a function of
/// its linear predictor, tabulated at multiples of the grid step.
struct PatternTable {
    /// Which coefficients enter the pattern's linear predictor.
    x: Vec<bool>,
    values: Vec<f64>,
}

const STEP: f64 = 0.05;
const HALF: i64 = 100; // 5 / STEP

fn log_sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        -(-eta).exp().ln_1p()
    } else {
        eta - eta.exp().ln_1p()
    }
}

fn grid_maximum(patterns: &[(Vec<bool>, usize, usize)], k: usize) -> f64 {
    let span = HALF * k as i64;
    let tables: Vec<PatternTable> = patterns
        .iter()
        .map(|(x, s, f)| PatternTable {
            x: x.clone(),
            values: (-span..=span)
                .map(|i| {
                    let eta = i as f64 * STEP;
                    *s as f64 * log_sigmoid(eta) + *f as f64 * log_sigmoid(-eta)
                })
                .collect(),
        })
        .collect();
    let n = (2 * HALF + 1) as usize;
    let last = k - 1;
    let (fixed, moving): (Vec<&PatternTable>, Vec<&PatternTable>) = tables.iter().partition(|t| !t.x[last]);

    // The outer coordinates are split across threads; the last coordinate
    // runs in the inner loop.
    let outer = n.pow(last as u32);
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).min(16);
    let chunk = outer.div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let fixed = &fixed;
                let moving = &moving;
                scope.spawn(move || {
                    let mut best = f64::NEG_INFINITY;
                    let mut acc = vec![0.0; n];
                    for code in t * chunk..((t + 1) * chunk).min(outer) {
                        let mut idx = vec![0i64; last];
                        let mut c = code;
                        for slot in idx.iter_mut() {
                            *slot = (c % n) as i64 - HALF;
                            c /= n;
                        }
                        let eta_of = |x: &[bool]| -> i64 { (0..last).filter(|&j| x[j]).map(|j| idx[j]).sum() };
                        let base: f64 = fixed.iter().map(|p| p.values[(eta_of(&p.x) + span) as usize]).sum();
                        acc.iter_mut().for_each(|a| *a = base);
                        for p in moving.iter() {
                            let start = (eta_of(&p.x) - HALF + span) as usize;
                            for (a, v) in acc.iter_mut().zip(&p.values[start..start + n]) {
                                *a += v;
                            }
                        }
                        best = acc.iter().fold(best, |m, &a| m.max(a));
                    }
                    best
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).fold(f64::NEG_INFINITY, f64::max)
    })
}

fn brute_force_mle() -> Outcome {
    let config = AuditConfig::default();
    let mut rng = SyntheticRng::new(0x5eed_0003);
    let mut designs = 0;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_grad = 0.0f64;
    let mut pass = true;
    // Three covariates dominate the grid cost, so fewer of those.
    for (c, count) in [(1usize, 8), (2, 8), (3, 4)] {
        for _ in 0..count {
            let k = c + 1;
            let n_patterns = 1usize << c;
            let budget = 60 - 2 * n_patterns;
            // Every pattern gets at least one success and one failure, so
            // the maximum is finite; the rest of n <= 60 is dealt at random.
            let mut counts = vec![(1usize, 1usize); n_patterns];
            let extra = (rng.next_u64() % (budget as u64 + 1)) as usize;
            for _ in 0..extra {
                let p = (rng.next_u64() % n_patterns as u64) as usize;
                if rng.bernoulli(0.5) {
                    counts[p].0 += 1;
                } else {
                    counts[p].1 += 1;
                }
            }
            let patterns: Vec<(Vec<bool>, usize, usize)> = (0..n_patterns)
                .map(|bits| {
                    let x: Vec<bool> = std::iter::once(true).chain((0..c).map(|j| bits >> j & 1 == 1)).collect();
                    (x, counts[bits].0, counts[bits].1)
                })
                .collect();
            let mut rows = Vec::new();
            let mut y = Vec::new();
            for (x, s, f) in &patterns {
                let row: Vec<f64> = x.iter().map(|&b| f64::from(u8::from(b))).collect();
                for i in 0..s + f {
                    rows.push(row.clone());
                    y.push(if i < *s { 1.0 } else { 0.0 });
                }
            }
            let labels = (0..k).map(|j| format!("b{j}")).collect();
            let design = DesignMatrix::from_rows(labels, &rows, y).unwrap();
            let model = fit(&design, &config).unwrap();
            let grid = grid_maximum(&patterns, k);
            let gap = grid - model.log_likelihood;
            let grad = score_vector(&design, &model.coefficients).iter().fold(0.0f64, |m, g| m.max(g.abs()));
            worst_gap = worst_gap.max(gap);
            worst_grad = worst_grad.max(grad);
            pass &= gap <= 1e-6 && grad < 1e-6;
            designs += 1;
        }
    }
    outcome(
        pass,
        format!(
            "{designs} designs; max(grid max - fitted L) = {worst_gap:.3e} (tol 1e-6); max |score| = {worst_grad:.3e} (tol 1e-6)"
        ),
    )
}

// 4. Null calibration.
fn null_calibration() -> Outcome {
    let schema = DemographicSchema::default();
    let config = AuditConfig::default();
    let mut rejections = 0;
    for seed in 0..200u64 {
        let m = generate_synthetic(&null_spec(0.5, 2000, seed)).unwrap();
        let s = score_manifest(&m).unwrap();
        let a = univariate_audit(&m, &s, Variable::Gender, &schema, &config).unwrap();
        rejections += usize::from(a.effects[0].significant);
    }
    let rate = rejections as f64 / 200.0;
    outcome((0.02..=0.09).contains(&rate), format!("Wald rejection rate {rate:.3} over 200 cohorts (band [0.02, 0.09])"))
}

// 5. Planted confounder.
const CONFOUNDED_SEED: u64 = 2023;

fn confounding_detection() -> Outcome {
    let m = generate_synthetic(&confounded_spec(CONFOUNDED_SEED)).unwrap();
    let s = score_manifest(&m).unwrap();
    let schema = DemographicSchema::default();
    let v = adjustment_test(&m, &s, Variable::Gender, Variable::DialectalRegion, &schema, &AuditConfig::default())
        .unwrap();
    let (u, a) = (&v.univariate_effects[0], &v.adjusted_effects[0]);
    let pass = v.verdict == Verdict::Confounder && u.significant && !a.significant;
    outcome(
        pass,
        format!(
            "verdict {}; male p {} -> {}; T = {:.2} vs critical {:.2} (df {})",
            v.verdict.as_str(),
            u.display.p,
            a.display.p,
            v.llr.statistic,
            v.llr.critical_value,
            v.llr.df
        ),
    )
}

// 6. Metrics against exhaustive search.

/// Every (S, D, I) of a minimum-cost alignment, by enumerating all
/// alignments without memoisation.
fn all_alignments(r: &[u8], h: &[u8], acc: (usize, usize, usize), out: &mut Vec<(usize, usize, usize)>) {
    if r.is_empty() && h.is_empty() {
        out.push(acc);
        return;
    }
    if !r.is_empty() && !h.is_empty() {
        let sub = usize::from(r[0] != h[0]);
        all_alignments(&r[1..], &h[1..], (acc.0 + sub, acc.1, acc.2), out);
    }
    if !r.is_empty() {
        all_alignments(&r[1..], h, (acc.0, acc.1 + 1, acc.2), out);
    }
    if !h.is_empty() {
        all_alignments(r, &h[1..], (acc.0, acc.1, acc.2 + 1), out);
    }
}

fn sequences(alphabet: &[u8], max_len: usize) -> Vec<Vec<u8>> {
    let mut all = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|s: &Vec<u8>| {
                alphabet.iter().map(move |&c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
        all.extend(frontier.iter().cloned());
    }
    all
}

fn permutations_match(a: &[String], b: &[String]) -> bool {
    fn go(a: &[String], b: &mut Vec<String>) -> bool {
        match a.split_first() {
            None => b.is_empty(),
            Some((head, rest)) => (0..b.len()).any(|i| {
                if b[i] != *head {
                    return false;
                }
                let taken = b.remove(i);
                let ok = go(rest, b);
                b.insert(i, taken);
                ok
            }),
        }
    }
    a.len() == b.len() && go(a, &mut b.to_vec())
}

fn as_parse(seq: &[u8]) -> Parse {
    let text = |c: u8| (c as char).to_string();
    match seq.split_first() {
        None => Parse::new("none", Vec::new()),
        Some((intent, slots)) => Parse::new(text(*intent), slots.iter().map(|&c| Slot::new(text(c), text(c))).collect()),
    }
}

fn metric_oracle() -> Outcome {
    let seqs = sequences(b"abc", 5);
    let mut wer_pairs = 0usize;
    let mut wer_bad = 0usize;
    for r in seqs.iter().filter(|s| !s.is_empty()) {
        let rt: Vec<String> = r.iter().map(|&c| (c as char).to_string()).collect();
        for h in &seqs {
            let ht: Vec<String> = h.iter().map(|&c| (c as char).to_string()).collect();
            let got: WordErrors = word_error_counts(&rt, &ht).unwrap();
            let mut found = Vec::new();
            all_alignments(r, h, (0, 0, 0), &mut found);
            let best = found.iter().map(|(s, d, i)| s + d + i).min().unwrap();
            let triple = (got.substitutions, got.deletions, got.insertions);
            let optimal = found.iter().any(|t| *t == triple);
            wer_pairs += 1;
            wer_bad += usize::from(got.total() != best || !optimal);
        }
    }
    // Case folding is exercised by an alphabet holding b and B.
    let seqs = sequences(b"abB", 5);
    let fold = |p: &Parse| -> (String, Vec<String>) {
        (
            p.intent.to_lowercase(),
            p.slots.iter().map(|s| format!("{}={}", s.name.to_lowercase(), s.value.to_lowercase())).collect(),
        )
    };
    let mut em_pairs = 0usize;
    let mut em_bad = 0usize;
    for r in &seqs {
        let pr = as_parse(r);
        let (ri, rs) = fold(&pr);
        for h in &seqs {
            let ph = as_parse(h);
            let (hi, hs) = fold(&ph);
            let oracle = u8::from(ri == hi && permutations_match(&rs, &hs));
            em_pairs += 1;
            em_bad += usize::from(exact_match(&pr, &ph) != oracle);
        }
    }
    outcome(
        wer_bad == 0 && em_bad == 0,
        format!("word errors: {wer_bad} mismatches over {wer_pairs} pairs; exact match: {em_bad} mismatches over {em_pairs} pairs"),
    )
}

// 7. ANOVA with two groups against the pooled t test.

fn ln_gamma_half_integer(twice: u32) -> f64 {
    // Γ(1/2) = sqrt(pi), Γ(1) = 1, Γ(x + 1) = x Γ(x).
    let mut x = if twice % 2 == 1 { 0.5 } else { 1.0 };
    let mut acc = if twice % 2 == 1 { 0.5 * std::f64::consts::PI.ln() } else { 0.0 };
    while 2.0 * x < twice as f64 {
        acc += x.ln();
        x += 1.0;
    }
    acc
}

/// Two-sided p of Student's t by Simpson quadrature of the density.
fn t_two_sided_quadrature(t: f64, df: u32) -> f64 {
    let nu = df as f64;
    let ln_c = ln_gamma_half_integer(df + 1) - ln_gamma_half_integer(df) - 0.5 * (nu * std::f64::consts::PI).ln();
    let density = |x: f64| (ln_c - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()).exp();
    let b = t.abs();
    let n = 20_000;
    let h = b / n as f64;
    let mut sum = density(0.0) + density(b);
    for i in 1..n {
        sum += density(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - 2.0 * sum * h / 3.0
}

fn anova_identity() -> Outcome {
    let mut rng = SyntheticRng::new(0x5eed_0007);
    let mut worst_f = 0.0f64;
    let mut worst_p = 0.0f64;
    let mut datasets = 0;
    while datasets < 50 {
        let mut draw = |n: usize, p: f64| -> Vec<f64> { (0..n).map(|_| f64::from(u8::from(rng.bernoulli(p)))).collect() };
        let (na, nb) = (5 + (datasets * 7) % 40, 5 + (datasets * 11) % 35);
        let a = draw(na, 0.3 + 0.01 * datasets as f64);
        let b = draw(nb, 0.5);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        let ss: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() + b.iter().map(|x| (x - mb).powi(2)).sum::<f64>();
        if ss == 0.0 {
            continue;
        }
        let df = (na + nb - 2) as u32;
        let t = (ma - mb) / (ss / df as f64 * (1.0 / na as f64 + 1.0 / nb as f64)).sqrt();
        let (f, _, _, p) = anova_groups(&[("a".into(), a), ("b".into(), b)]).unwrap();
        let p_t = t_two_sided_quadrature(t, df);
        worst_f = worst_f.max((f - t * t).abs());
        worst_p = worst_p.max((p - p_t).abs()).max((p - student_t_two_sided(t, df as f64).unwrap()).abs());
        datasets += 1;
    }
    outcome(
        worst_f <= 1e-8 && worst_p <= 1e-8,
        format!("{datasets} datasets; max |F - t^2| = {worst_f:.2e}, max |p_F - p_t| = {worst_p:.2e} (tol 1e-8)"),
    )
}

// 8. End-to-end determinism through the binary.

fn pipeline(dir: &Path, spec: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let bin = env!("CARGO_BIN_EXE_slu-audit");
    let steps: [&[&str]; 4] = [
        &["simulate", "--spec", spec.to_str().unwrap(), "--seed", "99", "--output", "m.jsonl"],
        &["score", "--input", "m.jsonl", "--output", "s.jsonl"],
        &[
            "matrix", "--input", "m.jsonl", "--input", "s.jsonl", "--variable", "gender", "--variable",
            "dialectal_region", "--output", "matrix.json",
        ],
        &["report", "--input", "m.jsonl", "--input", "s.jsonl", "--input", "matrix.json", "--output", "report.md"],
    ];
    for args in steps {
        let o = Command::new(bin).current_dir(dir).args(args).output().map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&o.stderr).trim()));
        }
    }
    ["m.jsonl", "s.jsonl", "matrix.json", "report.md"]
        .iter()
        .map(|f| fs::read(dir.join(f)).map(|b| (f.to_string(), b)).map_err(|e| e.to_string()))
        .collect()
}

fn end_to_end_determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let spec_path = root.path().join("spec.json");
    let spec: SyntheticSpec = confounded_spec(0);
    fs::write(&spec_path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    let mut runs = Vec::new();
    for name in ["first", "second"] {
        let dir = root.path().join(name);
        fs::create_dir(&dir).unwrap();
        match pipeline(&dir, &spec_path) {
            Ok(artifacts) => runs.push(artifacts),
            Err(e) => return outcome(false, e),
        }
    }
    let differing: Vec<&str> = runs[0]
        .iter()
        .zip(&runs[1])
        .filter(|(a, b)| a.1 != b.1)
        .map(|(a, _)| a.0.as_str())
        .collect();
    let sizes: Vec<String> = runs[0].iter().map(|(n, b)| format!("{n} {}B", b.len())).collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("artifacts byte-identical across two runs ({})", sizes.join(", "))
        } else {
            format!("artifacts differ: {}", differing.join(", "))
        },
    )
}

// 9. Documentation target and table shape.
fn documentation_target() -> Outcome {
    let readme = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let text = fs::read_to_string(&readme).unwrap_or_default();
    let mentions = ["0.85", "1.11", "1.48", "1.70"].iter().all(|v| text.contains(v));

    // A cohort with the age ORs planted, to show the emitted table shape.
    let base = 0.89f64;
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let ors = [("9-16", 0.85), ("17-28", 1.0), ("29-41", 1.11), ("42-54", 1.48), ("55-100", 1.70)];
    let mut spec = SyntheticSpec {
        group_probabilities: Default::default(),
        cell_counts: Default::default(),
        seed: 5,
        speakers_per_cell: 20,
    };
    for (level, or) in ors {
        let key = format!("|{level}|");
        spec.group_probabilities.insert(key.clone(), slu_audit::glm::logistic(logit(base) + f64::ln(or)));
        spec.cell_counts.insert(key, 20_000);
    }
    let m = generate_synthetic(&spec).unwrap();
    let s = score_manifest(&m).unwrap();
    let schema = DemographicSchema::default();
    let config = AuditConfig::default();
    let a = univariate_audit(&m, &s, Variable::AgeRange, &schema, &config).unwrap();
    let record = slu_audit::bias_tests::TestRecord::from_univariate(&a, config.alpha);
    let report = AuditReport::assemble(&m, &s, &[record], &config, &schema).unwrap();
    let md = render_markdown(&report);
    let rows: Vec<&str> = md.lines().filter(|l| l.starts_with("| ") && l.contains(" | [")).collect();
    let levels: Vec<&str> = rows.iter().map(|r| r.split(" | ").next().unwrap().trim_start_matches("| ")).collect();
    let shape = levels == ["9-16", "29-41", "42-54", "55-100"];
    let shown: Vec<String> = a.effects.iter().map(|e| format!("{} {}", e.level, e.display.or)).collect();
    outcome(
        mentions && shape,
        format!(
            "README lists reproduction targets: {mentions}; planted-cohort age table rows: {} ({})",
            rows.len(),
            shown.join(", ")
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags; a filter argument that matches
    // nothing here means another target was selected.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) {
        return;
    }
    let criteria: Vec<(&str, bool, Box<dyn FnOnce() -> Outcome>)> = vec![
        ("1 chi-squared quantiles", true, Box::new(|| timed(Duration::from_secs(1), chi2_quantiles))),
        ("2 2x2 oracle", true, Box::new(|| timed(Duration::from_secs(1), two_by_two_oracle))),
        ("3 MLE brute force", true, Box::new(|| timed(Duration::from_secs(30), brute_force_mle))),
        ("4 null calibration", true, Box::new(|| timed(Duration::from_secs(60), null_calibration))),
        ("5 confounding detection", true, Box::new(|| timed(Duration::from_secs(10), confounding_detection))),
        ("6 metric oracle", true, Box::new(|| timed(Duration::from_secs(60), metric_oracle))),
        ("7 ANOVA identity", true, Box::new(|| timed(Duration::from_secs(5), anova_identity))),
        ("8 end-to-end determinism", true, Box::new(end_to_end_determinism)),
        ("9 documentation target (non-blocking)", false, Box::new(documentation_target)),
    ];
    let mut failed = 0;
    for (name, blocking, run) in criteria {
        let o = run();
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass && blocking {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} blocking criterion/criteria failed");
        std::process::exit(1);
    }
}
