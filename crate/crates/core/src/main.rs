fn main() {
    stepcast::cli::run();
}
