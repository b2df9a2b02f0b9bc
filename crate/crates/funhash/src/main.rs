fn main() {
    std::process::exit(funhash::cli::run());
}
