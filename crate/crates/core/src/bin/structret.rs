fn main() {
    std::process::exit(structret::cli::main_with_args(std::env::args_os()));
}
