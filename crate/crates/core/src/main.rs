fn main() {
    std::process::exit(spectral_refine::cli::run(std::env::args_os()));
}
