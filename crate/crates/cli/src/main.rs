fn main() {
    std::process::exit(fastomo_cli::run(std::env::args_os()));
}
