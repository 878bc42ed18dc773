fn main() {
    std::process::exit(kband::cli::run(std::env::args_os()));
}
