fn main() {
    std::process::exit(levcool::cli::run(std::env::args_os()));
}
