fn main() {
    std::process::exit(vastree::cli::run(std::env::args_os()));
}
