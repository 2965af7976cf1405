fn main() {
    std::process::exit(heatlab_cli::main_with_args(std::env::args_os()));
}
