fn main() {
    std::process::exit(cystscan_cli::run_with_args(std::env::args_os()));
}
