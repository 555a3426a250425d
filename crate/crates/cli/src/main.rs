fn main() {
    std::process::exit(bimlta_cli::run(std::env::args_os()));
}
