fn main() {
    std::process::exit(ctgage::cli::main_with_args(std::env::args_os()));
}
