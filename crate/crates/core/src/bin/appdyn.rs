fn main() {
    std::process::exit(appdyn::cli::main());
}
