fn main() {
    std::process::exit(rggm::cli::parse_and_dispatch(std::env::args_os()));
}
