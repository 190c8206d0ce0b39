fn main() {
    std::process::exit(robofi::cli::run(std::env::args_os()));
}
