fn main() {
    std::process::exit(dyadcast::cli::run(std::env::args_os()));
}
