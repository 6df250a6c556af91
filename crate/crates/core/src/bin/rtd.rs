fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RTD_LOG_LEVEL", "warn")).init();
    std::process::exit(rtd::cli::run(std::env::args_os()));
}
