fn main() {
    std::process::exit(qsmooth::cli::run_main());
}
