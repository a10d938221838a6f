fn main() {
    std::process::exit(quizread::cli::main_with_args(std::env::args_os()));
}
