fn main() {
    let code = brsca_cli::cli::run(std::env::args_os());
    std::process::exit(code);
}
