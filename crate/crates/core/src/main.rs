fn main() {
    std::process::exit(sdkg::cli::main_with(std::env::args_os()));
}
