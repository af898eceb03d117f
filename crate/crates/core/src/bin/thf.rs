fn main() {
    std::process::exit(thf_core::cli::main_with_args(std::env::args_os()));
}
