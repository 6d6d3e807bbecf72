fn main() {
    std::process::exit(dualposenet::cli::main_with_args(std::env::args_os()));
}
