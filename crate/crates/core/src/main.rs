fn main() {
    std::process::exit(sefnet::cli::run(std::env::args_os()));
}
