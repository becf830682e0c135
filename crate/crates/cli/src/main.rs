fn main() {
    std::process::exit(percoqs_cli::run(std::env::args_os()));
}
