fn main() {
    let code = deepfm::cli::execute(std::env::args().skip(1).collect());
    std::process::exit(code);
}
