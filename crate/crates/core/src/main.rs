fn main() {
    std::process::exit(tcnformer::cli::dispatch(std::env::args_os()));
}
