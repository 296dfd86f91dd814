fn main() {
    std::process::exit(stdepth::cli::main());
}
