fn main() {
    std::process::exit(g3_cli::run(std::env::args_os()));
}
