fn main() {
    std::process::exit(fairci::cli::run());
}
