fn main() {
    std::process::exit(ensemble_downscaling::cli::run(std::env::args_os()));
}
