fn main() {
    std::process::exit(cafv_cli::run(std::env::args_os()));
}
