fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FPLAB_LOG", "info")).init();
    std::process::exit(fplab::cli::run(std::env::args_os()));
}
