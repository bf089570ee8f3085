fn main() {
    std::process::exit(predalign_cli::run(std::env::args_os()));
}
