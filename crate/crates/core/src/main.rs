fn main() {
    std::process::exit(hipe::cli::run(std::env::args_os()));
}
