fn main() {
    afb::cli::main();
}
