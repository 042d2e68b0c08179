fn main() {
    std::process::exit(potkv::cli::main_with(std::env::args_os()));
}
