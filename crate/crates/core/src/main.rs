fn main() {
    std::process::exit(medground::cli::run_cli(std::env::args_os()));
}
