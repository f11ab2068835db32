fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PROBR_LOG", "error")).init();
    std::process::exit(probr::cli::run(std::env::args_os()));
}
