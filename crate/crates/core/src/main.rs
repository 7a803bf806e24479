fn main() {
    std::process::exit(thermalcycle::cli::run(std::env::args_os()));
}
