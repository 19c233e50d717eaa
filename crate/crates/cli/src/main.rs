fn main() {
    std::process::exit(tfopt_cli::cli::main_with(std::env::args_os()));
}
