fn main() {
    std::process::exit(lacclust::cli::run(std::env::args_os()));
}
