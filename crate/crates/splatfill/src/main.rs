fn main() {
    std::process::exit(splatfill::cli::run_from_args(std::env::args_os()));
}
