fn main() {
    std::process::exit(handuq::cli::run(std::env::args_os()));
}
