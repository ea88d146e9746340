fn main() {
    std::process::exit(fgsim::cli::main_with_args(std::env::args_os()));
}
