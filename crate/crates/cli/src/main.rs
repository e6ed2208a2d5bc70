fn main() {
    std::process::exit(ttx_cli::run(std::env::args_os()));
}
