fn main() {
    std::process::exit(cdal::cli::run(std::env::args_os()));
}
