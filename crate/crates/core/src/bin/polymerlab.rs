fn main() {
    std::process::exit(polymerlab::cli::run_command(std::env::args_os()));
}
