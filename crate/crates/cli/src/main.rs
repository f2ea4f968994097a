fn main() {
    std::process::exit(zpart_cli::run(std::env::args_os()));
}
