fn main() {
    std::process::exit(soarqep::io::cli::run_cli(std::env::args_os()));
}
