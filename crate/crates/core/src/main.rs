fn main() {
    std::process::exit(agvid::cli::run(std::env::args_os()));
}
