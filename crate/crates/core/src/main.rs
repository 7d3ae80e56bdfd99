fn main() {
    std::process::exit(qtomo::cli::main_with_args(std::env::args_os()));
}
