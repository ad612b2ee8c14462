fn main() {
    std::process::exit(molham::cli::run(std::env::args_os()));
}
