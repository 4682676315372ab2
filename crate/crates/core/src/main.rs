fn main() {
    std::process::exit(fiberlab::bench::cli::run(std::env::args_os()));
}
