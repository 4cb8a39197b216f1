fn main() {
    std::process::exit(jasen::cli::run(std::env::args_os()));
}
