fn main() {
    std::process::exit(conjunction_mpc::cli::run_cli(std::env::args_os()));
}
