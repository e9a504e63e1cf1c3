fn main() {
    std::process::exit(npbg::cli::main_with_args(std::env::args_os()));
}
