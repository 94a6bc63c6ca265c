fn main() {
    std::process::exit(smcf_lab::cli::run_subcommand(std::env::args_os()));
}
