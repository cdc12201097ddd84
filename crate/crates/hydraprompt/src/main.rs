fn main() {
    std::process::exit(hydraprompt::cli::run(std::env::args_os()));
}
