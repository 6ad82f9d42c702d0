fn main() {
    std::process::exit(mssl_cli::run(std::env::args_os()));
}
