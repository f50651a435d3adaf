fn main() {
    std::process::exit(specseek::cli::run(std::env::args_os()));
}
