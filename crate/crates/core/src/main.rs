fn main() {
    std::process::exit(fcr::cli::run(std::env::args_os()));
}
