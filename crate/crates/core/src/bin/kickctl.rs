fn main() {
    std::process::exit(phasekick::cli::main_with_args(std::env::args_os()));
}
