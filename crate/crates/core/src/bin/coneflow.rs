fn main() {
    std::process::exit(coneflow::cli::main_with_args(std::env::args_os()));
}
