fn main() {
    std::process::exit(wonn::cli::run_cli(std::env::args_os()));
}
