fn main() {
    std::process::exit(spgan::cli::run(std::env::args_os()));
}
