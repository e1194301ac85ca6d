fn main() {
    std::process::exit(uld_cli::main_with_args(std::env::args_os()));
}
