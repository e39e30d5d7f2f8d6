fn main() {
    std::process::exit(desitter_bohm::cli::main_with_args(
        std::env::args().collect(),
    ));
}
