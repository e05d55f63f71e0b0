//! Traceability analytics for UTXO ledgers.
//!
//! The crate covers the full loop of a traceability study on a desk-scale
//! ledger: parse or generate a ledger ([`ingest`], [`synthgen`]), build the
//! windowed address graph ([`graph`]), measure anonymity sets
//! ([`metrics`]), match external prices to outputs ([`fingerprint`]) and
//! look for laundering structures ([`detectors`]), scoring detectors against
//! the generator's ground truth.
//!
//! Inner loops run on rayon when the default `parallel` feature is enabled
//! and fall back to sequential iteration otherwise; results are identical
//! either way.

pub mod detectors;
pub mod fingerprint;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod synthgen;
mod par;

pub use graph::{build_graph, TxGraph};
pub use model::{Amount, Ledger, OutPoint, Transaction, TxOutput, Txid, Window};
