fn main() {
    std::process::exit(petquant::cli::run(std::env::args_os()));
}
