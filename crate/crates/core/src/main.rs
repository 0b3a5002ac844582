fn main() {
    std::process::exit(thinlayer::cli::run(std::env::args_os()));
}
