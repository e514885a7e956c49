fn main() {
    std::process::exit(rmac::cli::run(std::env::args_os()));
}
