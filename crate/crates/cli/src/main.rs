fn main() {
    std::process::exit(kinface_cli::run(std::env::args_os()));
}
