fn main() {
    std::process::exit(sphereplane::cli::run(std::env::args_os()));
}
