fn main() {
    std::process::exit(handlayout::cli::run(std::env::args().skip(1)));
}
