fn main() {
    std::process::exit(mde::cli::main());
}
