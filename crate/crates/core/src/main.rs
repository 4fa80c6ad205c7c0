fn main() {
    std::process::exit(scd_core::cli::run(std::env::args_os()));
}
