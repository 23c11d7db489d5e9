fn main() {
    std::process::exit(nesht_cli::cli::main_with(std::env::args_os()));
}
