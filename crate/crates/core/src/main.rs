fn main() {
    std::process::exit(har_core::cli::main_with_args(std::env::args_os()));
}
