fn main() {
    std::process::exit(msacm::cli::main_with_args(std::env::args_os()));
}
