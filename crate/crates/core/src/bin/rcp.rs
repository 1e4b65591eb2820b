fn main() {
    std::process::exit(rcp_core::cli::main_with_args(std::env::args_os()));
}
