fn main() {
    std::process::exit(qstoch::cli::run(std::env::args_os()));
}
