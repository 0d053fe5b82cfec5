fn main() {
    std::process::exit(valc::cli::run(std::env::args_os()));
}
