fn main() {
    std::process::exit(adapthalt::cli::run(std::env::args_os()));
}
