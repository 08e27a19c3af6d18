fn main() {
    let code = sparseids::cli::main_with_args(std::env::args().collect());
    std::process::exit(code);
}
