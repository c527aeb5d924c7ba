fn main() {
    std::process::exit(state_vad::cli::main_with_args(std::env::args_os()));
}
