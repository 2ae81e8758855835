fn main() {
    std::process::exit(facetrack_cli::run_cli(std::env::args_os()));
}
