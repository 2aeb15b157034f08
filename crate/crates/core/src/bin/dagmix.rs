fn main() {
    std::process::exit(dagmix::cli::run(std::env::args_os()));
}
