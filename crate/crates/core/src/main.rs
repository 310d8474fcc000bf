fn main() {
    std::process::exit(ots::cli::run(std::env::args_os()));
}
