fn main() {
    std::process::exit(evdms::cli::run(std::env::args_os()));
}
