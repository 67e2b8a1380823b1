use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(boltzmann_cli::LOG_ENV, "warn")).init();
    let cli = boltzmann_cli::Cli::parse();
    std::process::exit(boltzmann_cli::run(&cli));
}
