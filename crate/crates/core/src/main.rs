fn main() {
    std::process::exit(gtprob::cli::run(std::env::args()));
}
