fn main() {
    std::process::exit(ctconform::cli::main_with_args(std::env::args_os()));
}
