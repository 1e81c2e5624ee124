fn main() {
    std::process::exit(nas_cli::run(std::env::args_os()));
}
