fn main() {
    std::process::exit(sparse_cpapr::cli::run(std::env::args_os()));
}
