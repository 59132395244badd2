fn main() {
    std::process::exit(tsne_ee::cli::run(std::env::args_os()));
}
