fn main() {
    std::process::exit(graphcontrol_cli::main_with_args(std::env::args_os()));
}
