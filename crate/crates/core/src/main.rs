fn main() {
    cmit::cli::init_logging();
    std::process::exit(cmit::cli::main_with_args(std::env::args_os()));
}
