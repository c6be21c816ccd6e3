fn main() {
    std::process::exit(margin_lab::cli::run_from(std::env::args_os()));
}
