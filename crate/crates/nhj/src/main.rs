fn main() {
    std::process::exit(nhj::cli::run());
}
