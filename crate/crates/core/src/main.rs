fn main() {
    std::process::exit(blockstein::cli::run(std::env::args_os()));
}
