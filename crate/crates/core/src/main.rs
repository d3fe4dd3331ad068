fn main() {
    std::process::exit(bdff::cli::dispatch(std::env::args()));
}
