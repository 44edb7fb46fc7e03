fn main() {
    std::process::exit(saturadeblur::cli::run(std::env::args_os()));
}
