fn main() {
    std::process::exit(lowrate::cli::run(std::env::args_os()));
}
