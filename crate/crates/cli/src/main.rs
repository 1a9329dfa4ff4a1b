fn main() {
    std::process::exit(b2n_cli::run(std::env::args_os()));
}
