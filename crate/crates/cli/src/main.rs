fn main() {
    std::process::exit(threshold_gap_cli::run(std::env::args_os()));
}
