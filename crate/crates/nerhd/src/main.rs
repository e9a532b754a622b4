fn main() {
    std::process::exit(nerhd::cli::run(std::env::args_os()));
}
