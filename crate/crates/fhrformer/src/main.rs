fn main() {
    std::process::exit(fhrformer::cli::run(std::env::args_os()));
}
