fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SHAPEFORGE_LOG", "info")).format_timestamp(None).init();
    std::process::exit(shapeforge::pipeline::run_command(std::env::args_os()));
}
