fn main() {
    std::process::exit(lrdrop::cli::dispatch(std::env::args_os()));
}
