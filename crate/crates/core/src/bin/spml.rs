fn main() {
    std::process::exit(spml::cli::main_with_args(std::env::args_os()));
}
