use clap::Parser;

use splitledger_server::{run, Config};

#[tokio::main]
async fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let config = Config::parse();
    if let Err(e) = run(config).await {
        eprintln!("splitledger: {e}");
        std::process::exit(1);
    }
}
