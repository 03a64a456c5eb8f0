fn main() {
    std::process::exit(slu_audit_cli::run(std::env::args_os()));
}
