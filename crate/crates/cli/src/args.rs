use std::path::PathBuf;

use chaintrace::synthgen::InjectRequest;
use chaintrace::Amount;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Unix seconds; parsed from either an integer or an RFC 3339 timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl std::str::FromStr for Timestamp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(n) = s.parse::<i64>() {
            return Ok(Timestamp(n));
        }
        chrono::DateTime::parse_from_rfc3339(s)
            .map(|d| Timestamp(d.timestamp()))
            .map_err(|e| format!("{s:?} is neither unix seconds nor RFC 3339: {e}"))
    }
}

/// `IxO`, e.g. `1x2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Shape(pub usize, pub usize);

impl std::str::FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (i, o) = s
            .split_once(['x', 'X', ','])
            .ok_or_else(|| format!("expected INPUTSxOUTPUTS, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{s:?}: {e}"));
        let (i, o) = (parse(i)?, parse(o)?);
        if i == 0 || o == 0 {
            return Err("shape counts must be positive".into());
        }
        Ok(Shape(i, o))
    }
}

fn btc(s: &str) -> Result<Amount, String> {
    Amount::from_btc_str(s).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "chaintrace", version, about = "Traceability analytics for UTXO ledgers")]
pub struct Cli {
    /// Worker threads (results are identical for any value)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output format; each command has its own default
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Main artifact path (stdout when omitted)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Manifest path (default: <out>.manifest.json)
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct LedgerArgs {
    /// Ledger in JSON Lines form
    #[arg(long)]
    pub ledger: PathBuf,
    /// Window start, unix seconds or RFC 3339 (default: first transaction)
    #[arg(long)]
    pub from: Option<Timestamp>,
    /// Window end, exclusive (default: after the last transaction)
    #[arg(long)]
    pub to: Option<Timestamp>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Check a ledger and print summary statistics
    Validate {
        #[command(flatten)]
        #[serde(flatten)]
        input: LedgerArgs,
        /// Labels file, used to report the entity count
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Generate a synthetic ledger with labeled injections
    Generate(GenerateArgs),
    /// Taint distance of every address reachable from a black list
    Taint(TaintArgs),
    /// Number of addresses at each taint distance
    Reach(TaintArgs),
    /// Multi-input address clustering
    Cluster {
        #[command(flatten)]
        #[serde(flatten)]
        input: LedgerArgs,
        /// Also merge detected change outputs
        #[arg(long)]
        change_heuristic: bool,
    },
    /// Anonymity metrics
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Match listing prices to outputs of the listing day
    Fingerprint {
        #[command(flatten)]
        #[serde(flatten)]
        input: LedgerArgs,
        /// Listings CSV: day,market,vendor,item_id,price_btc
        #[arg(long)]
        listings: PathBuf,
        /// Accepted deviation from the price, in BTC
        #[arg(long, default_value = "0", value_parser = btc)]
        tolerance: Amount,
        /// Emit per-day category counts instead of per-listing records
        #[arg(long)]
        series: bool,
    },
    /// Pattern detectors
    #[command(subcommand)]
    Detect(DetectCommand),
    /// Score a prospective payment against the window's distributions
    Audit {
        #[command(flatten)]
        #[serde(flatten)]
        input: LedgerArgs,
        #[arg(long, value_parser = btc)]
        amount: Amount,
        /// Transaction shape, e.g. 1x2
        #[arg(long)]
        shape: Shape,
        /// Minimum amount anonymity for a frequent denomination: a count, or "median"
        #[arg(long, default_value = "median")]
        threshold: String,
    },
    /// Re-run the command recorded in --manifest and compare digests
    Replay,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Background transactions
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Ground-truth labels output
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub wallets: usize,
    #[arg(long, default_value = "1577836800")]
    pub from: Timestamp,
    /// Default: 30 days after --from
    #[arg(long)]
    pub to: Option<Timestamp>,
    #[arg(long, default_value_t = 0.7)]
    pub round_weight: f64,
    #[arg(long, default_value_t = 0.3)]
    pub specific_weight: f64,
    /// Chainlet distribution JSON: [{"inputs":1,"outputs":2,"probability":0.57}, ...]
    #[arg(long)]
    pub distribution: Option<PathBuf>,
    /// KIND[:COUNT] with KIND one of peeling, mixing, ransom, dusting, sale
    #[arg(long = "inject")]
    pub inject: Vec<InjectRequest>,
    /// Listings to turn into sale injections
    #[arg(long)]
    pub listings: Option<PathBuf>,
    /// Write the listings behind sale injections here
    #[arg(long)]
    pub listings_out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub peel_length: usize,
    #[arg(long, default_value_t = 0.1)]
    pub peel_fraction: f64,
    #[arg(long, default_value_t = 20)]
    pub mix_participants: usize,
    #[arg(long, default_value_t = 2)]
    pub mix_rounds: usize,
    #[arg(long, default_value = "0.1", value_parser = btc)]
    pub mix_denomination: Amount,
    #[arg(long, default_value_t = 150)]
    pub ransom_inputs: usize,
    /// Seconds between the gathering and the payment transaction
    #[arg(long, default_value_t = 86_400)]
    pub ransom_gap: i64,
    #[arg(long, default_value_t = 10_800)]
    pub ransom_jitter: i64,
    #[arg(long, default_value = "0.00000546", value_parser = btc)]
    pub dust_amount: Amount,
    #[arg(long, default_value = "1x2")]
    pub sale_shape: Shape,
}

#[derive(Debug, Args, Serialize)]
pub struct TaintArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: LedgerArgs,
    /// Black address list, one per line
    #[arg(long)]
    pub black: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub max_d: u32,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "metric")]
pub enum MetricsCommand {
    /// Transactions (and outputs) paying a given amount
    Amount {
        #[command(flatten)]
        #[serde(flatten)]
        input: LedgerArgs,
        #[arg(long, value_parser = btc)]
        amount: Amount,
        #[arg(long, default_value = "0", value_parser = btc)]
        tolerance: Amount,
    },
    /// Transactions of an exact shape
    Chainlet {
        #[command(flatten)]
        #[serde(flatten)]
        input: LedgerArgs,
        #[arg(long)]
        inputs: usize,
        #[arg(long)]
        outputs: usize,
    },
    /// Clamped chainlet occurrence matrix
    #[command(alias = "chainlet-matrix")]
    Matrix {
        #[command(flatten)]
        #[serde(flatten)]
        input: LedgerArgs,
        #[arg(long, default_value_t = 6)]
        clamp: usize,
        /// Raw counts instead of fractions
        #[arg(long)]
        counts: bool,
    },
    /// Most frequent output amounts
    Denoms {
        #[command(flatten)]
        #[serde(flatten)]
        input: LedgerArgs,
        #[arg(long, default_value_t = 20)]
        top: usize,
    },
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Ground-truth labels from `generate`
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Score detections against --labels
    #[arg(long, requires = "labels")]
    pub eval: bool,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "detector")]
pub enum DetectCommand {
    Ransom {
        #[command(flatten)]
        #[serde(flatten)]
        input: LedgerArgs,
        #[command(flatten)]
        #[serde(flatten)]
        eval: EvalArgs,
        #[arg(long, default_value_t = 50)]
        min_t1_inputs: usize,
        #[arg(long, default_value_t = 2)]
        max_t2_outputs: usize,
        #[arg(long, default_value_t = 86_400)]
        gap_center: i64,
        #[arg(long, default_value_t = 21_600)]
        gap_slack: i64,
        #[arg(long, default_value = "0", value_parser = btc)]
        min_amount: Amount,
    },
    Peeling {
        #[command(flatten)]
        #[serde(flatten)]
        input: LedgerArgs,
        #[command(flatten)]
        #[serde(flatten)]
        eval: EvalArgs,
        #[arg(long, default_value_t = 4)]
        min_length: usize,
        #[arg(long, default_value_t = 0.3)]
        peel_fraction_max: f64,
    },
    Mixing {
        #[command(flatten)]
        #[serde(flatten)]
        input: LedgerArgs,
        #[command(flatten)]
        #[serde(flatten)]
        eval: EvalArgs,
        #[arg(long, default_value_t = 5)]
        min_equal_outputs: usize,
        #[arg(long, default_value_t = 2)]
        min_rounds: usize,
    },
}
