//! Ledger records, chainlet shapes and structural validation.
//!
//! A [`Ledger`] is only obtainable through [`validate_ledger`], so every
//! ledger in circulation satisfies the UTXO invariants: inputs resolve to
//! earlier outputs, no outpoint is spent twice, fees are non-negative and all
//! timestamps fall inside the observation window.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const SATS_PER_BTC: u64 = 100_000_000;

/// Default clamp of the chainlet occurrence matrix.
pub const DEFAULT_CLAMP: usize = 6;

/// An amount in satoshis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Amount(u64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AmountParseError {
    #[error("empty amount")]
    Empty,
    #[error("invalid decimal amount {0:?}")]
    Invalid(String),
    #[error("amount {0:?} has more than 8 fractional digits")]
    Precision(String),
    #[error("amount {0:?} overflows")]
    Overflow(String),
}

impl Amount {
    pub const ZERO: Amount = Amount(0);
    pub const MAX: Amount = Amount(u64::MAX);

    pub const fn from_sat(sat: u64) -> Self {
        Amount(sat)
    }

    pub const fn to_sat(self) -> u64 {
        self.0
    }

    /// Parses a decimal BTC string ("0.067459", "1", "2.5") exactly.
    /// More than eight fractional digits is an error, never a rounding.
    pub fn from_btc_str(s: &str) -> Result<Self, AmountParseError> {
        let s = s.trim();
        if s.is_empty() {
            return Err(AmountParseError::Empty);
        }
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        let digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
        if (whole.is_empty() && frac.is_empty()) || !digits(whole) || !digits(frac) {
            return Err(AmountParseError::Invalid(s.to_owned()));
        }
        if frac.len() > 8 {
            // trailing zeros beyond the eighth place carry no value
            if frac[8..].bytes().any(|b| b != b'0') {
                return Err(AmountParseError::Precision(s.to_owned()));
            }
        }
        let overflow = || AmountParseError::Overflow(s.to_owned());
        let whole_sat = if whole.is_empty() {
            0
        } else {
            whole
                .parse::<u64>()
                .map_err(|_| overflow())?
                .checked_mul(SATS_PER_BTC)
                .ok_or_else(overflow)?
        };
        let frac8 = &frac[..frac.len().min(8)];
        let mut frac_sat = 0u64;
        for (i, b) in frac8.bytes().enumerate() {
            frac_sat += u64::from(b - b'0') * 10u64.pow(7 - i as u32);
        }
        whole_sat
            .checked_add(frac_sat)
            .map(Amount)
            .ok_or_else(overflow)
    }

    pub fn checked_add(self, rhs: Amount) -> Option<Amount> {
        self.0.checked_add(rhs.0).map(Amount)
    }

    pub fn checked_sub(self, rhs: Amount) -> Option<Amount> {
        self.0.checked_sub(rhs.0).map(Amount)
    }

    pub fn abs_diff(self, rhs: Amount) -> Amount {
        Amount(self.0.abs_diff(rhs.0))
    }

    /// Sum that reports overflow instead of wrapping.
    pub fn checked_sum<I: IntoIterator<Item = Amount>>(iter: I) -> Option<Amount> {
        iter.into_iter().try_fold(Amount::ZERO, Amount::checked_add)
    }
}

/// Renders as decimal BTC with trailing zeros trimmed.
impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / SATS_PER_BTC;
        let frac = self.0 % SATS_PER_BTC;
        if frac == 0 {
            write!(f, "{whole}")
        } else {
            let s = format!("{frac:08}");
            write!(f, "{whole}.{}", s.trim_end_matches('0'))
        }
    }
}

impl FromStr for Amount {
    type Err = AmountParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Amount::from_btc_str(s)
    }
}

/// Opaque 32-byte transaction identifier, hex encoded on the wire.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Txid(pub [u8; 32]);

impl Txid {
    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Txid(out))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Txid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Txid({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Txid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Txid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Txid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        if s.len() != 64 {
            return Err(serde::de::Error::custom(format!(
                "txid must be 64 hex characters, got {}",
                s.len()
            )));
        }
        Txid::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OutPoint {
    pub txid: Txid,
    pub vout: u32,
}

impl fmt::Display for OutPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.txid, self.vout)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TxOutput {
    pub address: String,
    pub amount: Amount,
}

impl TxOutput {
    pub fn new(address: impl Into<String>, amount: Amount) -> Self {
        TxOutput {
            address: address.into(),
            amount,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub txid: Txid,
    /// Unix seconds.
    pub time: i64,
    /// Empty for coinbase transactions.
    pub inputs: Vec<OutPoint>,
    pub outputs: Vec<TxOutput>,
}

impl Transaction {
    pub fn is_coinbase(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Exact first-order shape; a coinbase counts as one input.
    pub fn shape(&self) -> (usize, usize) {
        (self.inputs.len().max(1), self.outputs.len())
    }

    pub fn output_total(&self) -> Option<Amount> {
        Amount::checked_sum(self.outputs.iter().map(|o| o.amount))
    }
}

/// Chainlet type `(inputs, outputs)` with both counts clamped at `clamp`.
pub fn chainlet_of(tx: &Transaction, clamp: usize) -> (usize, usize) {
    assert!(clamp >= 1, "chainlet clamp must be at least 1");
    let (i, o) = tx.shape();
    (i.min(clamp), o.min(clamp))
}

/// Half-open observation window `[start, end)` in unix seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub start: i64,
    pub end: i64,
}

impl Window {
    pub fn new(start: i64, end: i64) -> Self {
        Window { start, end }
    }

    /// The window spanning every representable timestamp.
    pub fn unbounded() -> Self {
        Window {
            start: i64::MIN,
            end: i64::MAX,
        }
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn intersect(&self, other: &Window) -> Window {
        Window {
            start: self.start.max(other.start),
            end: self.end.min(other.end),
        }
    }

    pub fn len_seconds(&self) -> i64 {
        (self.end - self.start).max(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationError {
    #[error("{txid}: input {outpoint} does not resolve to an earlier output")]
    DanglingInput { txid: Txid, outpoint: OutPoint },
    #[error("outpoint {outpoint} spent by {} transactions", spenders.len())]
    DoubleSpend {
        outpoint: OutPoint,
        spenders: Vec<Txid>,
    },
    #[error("{txid}: outputs {outputs} exceed inputs {inputs}")]
    NegativeFee {
        txid: Txid,
        inputs: Amount,
        outputs: Amount,
    },
    #[error("{txid}: timestamp {time} outside window [{}, {})", window.start, window.end)]
    OutOfWindow {
        txid: Txid,
        time: i64,
        window: Window,
    },
    #[error("duplicate txid {txid}")]
    DuplicateTxid { txid: Txid },
    #[error("{txid}: transaction has no outputs")]
    NoOutputs { txid: Txid },
    #[error("{txid}: output {vout} has an empty address")]
    EmptyAddress { txid: Txid, vout: u32 },
    #[error("{txid}: amount sum overflows")]
    AmountOverflow { txid: Txid },
}

impl ValidationError {
    /// Transaction the violation is attributed to.
    pub fn txid(&self) -> Txid {
        match self {
            ValidationError::DanglingInput { txid, .. }
            | ValidationError::NegativeFee { txid, .. }
            | ValidationError::OutOfWindow { txid, .. }
            | ValidationError::DuplicateTxid { txid }
            | ValidationError::NoOutputs { txid }
            | ValidationError::EmptyAddress { txid, .. }
            | ValidationError::AmountOverflow { txid } => *txid,
            ValidationError::DoubleSpend { spenders, .. } => spenders[spenders.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} ledger violation(s), first: {}", .0.len(), .0[0])]
pub struct ValidationErrors(pub Vec<ValidationError>);

/// Observed transaction set ordered by `(time, txid)`.
#[derive(Debug, Clone)]
pub struct Ledger {
    txs: Vec<Transaction>,
    window: Window,
    index: HashMap<Txid, usize>,
}

impl PartialEq for Ledger {
    fn eq(&self, other: &Self) -> bool {
        self.window == other.window && self.txs == other.txs
    }
}

impl Eq for Ledger {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LedgerStats {
    pub n_tx: usize,
    pub n_addresses: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_entities: Option<usize>,
}

impl Ledger {
    pub fn empty(window: Window) -> Self {
        Ledger {
            txs: Vec::new(),
            window,
            index: HashMap::new(),
        }
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.txs
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    pub fn position(&self, txid: &Txid) -> Option<usize> {
        self.index.get(txid).copied()
    }

    pub fn get(&self, txid: &Txid) -> Option<&Transaction> {
        self.position(txid).map(|p| &self.txs[p])
    }

    /// The output an input refers to.
    pub fn resolve(&self, outpoint: &OutPoint) -> Option<&TxOutput> {
        self.get(&outpoint.txid)
            .and_then(|tx| tx.outputs.get(outpoint.vout as usize))
    }

    pub fn input_total(&self, tx: &Transaction) -> Option<Amount> {
        let amounts: Option<Vec<Amount>> =
            tx.inputs.iter().map(|i| self.resolve(i).map(|o| o.amount)).collect();
        amounts.and_then(Amount::checked_sum)
    }

    pub fn fee(&self, tx: &Transaction) -> Option<Amount> {
        if tx.is_coinbase() {
            return Some(Amount::ZERO);
        }
        self.input_total(tx)?.checked_sub(tx.output_total()?)
    }

    /// Contiguous slice of transactions with timestamps inside `window`.
    pub fn in_window(&self, window: Window) -> &[Transaction] {
        let lo = self.txs.partition_point(|t| t.time < window.start);
        let hi = self.txs.partition_point(|t| t.time < window.end);
        &self.txs[lo..hi.max(lo)]
    }

    /// Unspent outputs after replaying every transaction, in ledger order.
    pub fn utxos(&self) -> Vec<(OutPoint, &TxOutput)> {
        let spent: HashSet<&OutPoint> = self.txs.iter().flat_map(|t| &t.inputs).collect();
        self.txs
            .iter()
            .flat_map(|t| {
                t.outputs.iter().enumerate().map(move |(v, o)| {
                    (
                        OutPoint {
                            txid: t.txid,
                            vout: v as u32,
                        },
                        o,
                    )
                })
            })
            .filter(|(op, _)| !spent.contains(op))
            .collect()
    }

    pub fn stats(&self, n_entities: Option<usize>) -> LedgerStats {
        let mut addrs: HashSet<&str> = HashSet::new();
        for tx in &self.txs {
            for o in &tx.outputs {
                addrs.insert(&o.address);
            }
        }
        LedgerStats {
            n_tx: self.txs.len(),
            n_addresses: addrs.len(),
            n_entities,
        }
    }

    pub fn into_transactions(self) -> Vec<Transaction> {
        self.txs
    }
}

/// Validates and orders a transaction set, reporting every violation found.
pub fn validate_ledger(
    mut txs: Vec<Transaction>,
    window: Window,
) -> Result<Ledger, ValidationErrors> {
    txs.sort_by_key(|t| (t.time, t.txid));
    let mut errors = Vec::new();

    let mut index: HashMap<Txid, usize> = HashMap::with_capacity(txs.len());
    for (pos, tx) in txs.iter().enumerate() {
        if index.insert(tx.txid, pos).is_some() {
            errors.push(ValidationError::DuplicateTxid { txid: tx.txid });
        }
    }

    let mut spenders: HashMap<OutPoint, Vec<Txid>> = HashMap::new();
    for (pos, tx) in txs.iter().enumerate() {
        if !window.contains(tx.time) {
            errors.push(ValidationError::OutOfWindow {
                txid: tx.txid,
                time: tx.time,
                window,
            });
        }
        if tx.outputs.is_empty() {
            errors.push(ValidationError::NoOutputs { txid: tx.txid });
        }
        for (vout, out) in tx.outputs.iter().enumerate() {
            if out.address.is_empty() {
                errors.push(ValidationError::EmptyAddress {
                    txid: tx.txid,
                    vout: vout as u32,
                });
            }
        }
        let Some(out_total) = tx.output_total() else {
            errors.push(ValidationError::AmountOverflow { txid: tx.txid });
            continue;
        };

        let mut in_total = Some(Amount::ZERO);
        for input in &tx.inputs {
            spenders.entry(*input).or_default().push(tx.txid);
            let resolved = index
                .get(&input.txid)
                .filter(|&&p| p < pos)
                .and_then(|&p| txs[p].outputs.get(input.vout as usize));
            match resolved {
                Some(out) => in_total = in_total.and_then(|s| s.checked_add(out.amount)),
                None => {
                    errors.push(ValidationError::DanglingInput {
                        txid: tx.txid,
                        outpoint: *input,
                    });
                    in_total = None;
                }
            }
        }
        if !tx.is_coinbase() {
            if let Some(inputs) = in_total {
                if inputs < out_total {
                    errors.push(ValidationError::NegativeFee {
                        txid: tx.txid,
                        inputs,
                        outputs: out_total,
                    });
                }
            }
        }
    }

    let mut double: Vec<_> = spenders
        .into_iter()
        .filter(|(_, s)| s.len() > 1)
        .map(|(outpoint, spenders)| ValidationError::DoubleSpend { outpoint, spenders })
        .collect();
    double.sort_by_key(|e| match e {
        ValidationError::DoubleSpend { outpoint, .. } => *outpoint,
        _ => unreachable!(),
    });
    errors.extend(double);

    if errors.is_empty() {
        Ok(Ledger { txs, window, index })
    } else {
        Err(ValidationErrors(errors))
    }
}
