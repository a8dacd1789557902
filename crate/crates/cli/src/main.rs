fn main() {
    std::process::exit(senet_cli::run(std::env::args()));
}
