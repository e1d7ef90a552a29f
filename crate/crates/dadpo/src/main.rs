use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = dadpo::cli::Cli::parse();
    if let Err(err) = dadpo::cli::run(cli) {
        eprintln!("{}", err.to_json());
        std::process::exit(err.exit_code());
    }
}
