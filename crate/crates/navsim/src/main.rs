fn main() {
    std::process::exit(navsim::cli::main_with_args(std::env::args_os()));
}
