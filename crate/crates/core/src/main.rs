fn main() {
    std::process::exit(outbreak_fusion::cli::run(std::env::args_os()));
}
