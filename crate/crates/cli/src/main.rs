fn main() {
    std::process::exit(petriplan_cli::run(std::env::args_os()));
}
