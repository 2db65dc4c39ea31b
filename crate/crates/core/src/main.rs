fn main() {
    std::process::exit(holderlab::cli::main_with_args(std::env::args_os()));
}
