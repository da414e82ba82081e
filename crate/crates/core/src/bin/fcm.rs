fn main() {
    std::process::exit(fcm_core::cli::run(std::env::args_os()));
}
