fn main() {
    std::process::exit(twohead::cli::main_with_args(std::env::args_os()));
}
