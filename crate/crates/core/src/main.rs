fn main() {
    std::process::exit(exam::cli::run(std::env::args_os()));
}
