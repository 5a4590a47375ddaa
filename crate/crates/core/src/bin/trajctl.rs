fn main() {
    std::process::exit(traj_unlearn::harness::cli::run_from(std::env::args_os()));
}
