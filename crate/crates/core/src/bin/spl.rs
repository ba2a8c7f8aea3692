fn main() {
    std::process::exit(spl_core::cli::main());
}
