fn main() {
    std::process::exit(stlm::cli::run(std::env::args().collect()));
}
