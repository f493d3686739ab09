fn main() {
    std::process::exit(vtrig_cli::main_with_args(std::env::args_os()));
}
