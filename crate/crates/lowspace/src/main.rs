fn main() {
    std::process::exit(lowspace::cli::run(std::env::args_os()));
}
