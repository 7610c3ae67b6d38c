fn main() {
    std::process::exit(fusiondet::cli::main_with_args(std::env::args_os()));
}
