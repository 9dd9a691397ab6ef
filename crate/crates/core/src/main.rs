fn main() {
    std::process::exit(recest::cli::main_with_args(std::env::args_os()));
}
