fn main() {
    std::process::exit(causalkit::cli::run(std::env::args_os()));
}
