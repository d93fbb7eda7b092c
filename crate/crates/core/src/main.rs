fn main() {
    std::process::exit(pot_core::cli::main());
}
