fn main() {
    std::process::exit(msvae::cli::run(std::env::args_os()));
}
