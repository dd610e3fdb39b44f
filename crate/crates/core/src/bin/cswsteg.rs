fn main() {
    std::process::exit(cswsteg::cli::run(std::env::args_os()));
}
