fn main() {
    std::process::exit(treenet::cli::run(std::env::args_os()));
}
