fn main() {
    std::process::exit(momentguide_cli::run(std::env::args_os()));
}
