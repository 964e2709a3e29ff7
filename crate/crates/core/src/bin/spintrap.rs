fn main() {
    std::process::exit(spintrap::cli::main_with_args(std::env::args_os()));
}
