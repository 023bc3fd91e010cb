fn main() {
    std::process::exit(hbv::cli::main_with_args(std::env::args_os()));
}
