fn main() {
    std::process::exit(fluororeg::cli::run(std::env::args_os()));
}
