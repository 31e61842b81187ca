use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = foldpack::cli::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    std::process::exit(foldpack::cli::run(cli, &mut stdout));
}
