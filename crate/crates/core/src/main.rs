fn main() {
    std::process::exit(boat_core::cli::run(std::env::args_os()));
}
