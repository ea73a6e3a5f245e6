fn main() {
    std::process::exit(rare_cli::run(std::env::args().collect()));
}
