fn main() {
    std::process::exit(hvn::cli::run(std::env::args_os()));
}
