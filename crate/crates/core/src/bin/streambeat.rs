fn main() {
    std::process::exit(streambeat::cli::run(std::env::args_os()));
}
