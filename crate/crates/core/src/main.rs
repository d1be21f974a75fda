fn main() {
    std::process::exit(srsched::cli::main_with(std::env::args_os()));
}
