use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use splitledger_core::payments::FailPoint;

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum StoreKind {
    /// Append-only logs under the data directory.
    File,
    /// Process memory; everything is lost on exit.
    Memory,
}

impl StoreKind {
    pub fn name(self) -> &'static str {
        match self {
            StoreKind::File => "file",
            StoreKind::Memory => "memory",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    CrashAfterPaymentRecord,
}

impl From<Fault> for FailPoint {
    fn from(f: Fault) -> Self {
        match f {
            Fault::CrashAfterPaymentRecord => FailPoint::CrashAfterPaymentRecord,
        }
    }
}

/// Expense-sharing server: events, friends, chat and card payments.
#[derive(Clone, Debug, Parser)]
#[command(name = "splitledger", version)]
pub struct Config {
    /// TCP port to listen on; 0 picks a free one.
    #[arg(long, env = "SPLITLEDGER_PORT", default_value_t = 8080)]
    pub port: u16,

    /// Address to bind.
    #[arg(long, env = "SPLITLEDGER_HOST", default_value = "127.0.0.1")]
    pub host: IpAddr,

    /// Directory holding the collection logs (file store only).
    #[arg(long, env = "SPLITLEDGER_DATA_DIR", default_value = "./data")]
    pub data_dir: PathBuf,

    #[arg(long, value_enum, default_value_t = StoreKind::File)]
    pub store: StoreKind,

    /// Load a few demo users, friendships, an event and cards on startup.
    #[arg(long)]
    pub seed_demo: bool,

    /// Password hashing work factor.
    #[arg(long, env = "SPLITLEDGER_KDF_ITERATIONS", default_value_t = 100_000, hide = true)]
    pub kdf_iterations: u32,

    /// Makes every mock gateway charge take this long.
    #[arg(long, env = "SPLITLEDGER_GATEWAY_DELAY_MS", default_value_t = 0, hide = true)]
    pub gateway_delay_ms: u64,

    /// Deliberate crash site, for recovery testing.
    #[arg(long, env = "SPLITLEDGER_FAULT", value_enum, hide = true)]
    pub fault: Option<Fault>,
}
