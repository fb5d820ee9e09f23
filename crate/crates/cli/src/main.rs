fn main() {
    std::process::exit(emkrylov_cli::run(std::env::args_os()));
}
