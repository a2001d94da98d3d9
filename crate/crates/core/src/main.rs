fn main() {
    std::process::exit(denoise_kd::cli::run_from_args(std::env::args_os()));
}
