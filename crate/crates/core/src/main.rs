fn main() {
    std::process::exit(lcband::cli::run(std::env::args_os()));
}
