fn main() {
    std::process::exit(reprlink::cli::dispatch(std::env::args_os()));
}
