fn main() {
    std::process::exit(refprior::cli::run_cli(std::env::args_os()));
}
