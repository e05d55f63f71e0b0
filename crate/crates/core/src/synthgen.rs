//! Seeded synthetic ledgers with labeled laundering and evasion patterns.
//!
//! [`gen_background`] produces an ordinary-looking ledger: wallets spend
//! only their own coins, transaction shapes follow a target chainlet
//! distribution and amounts mix round denominations with oddly specific
//! values. The `inject_*` methods on [`SynthLedger`] then append labeled
//! patterns (peeling chains, mixing rounds, ransom payments, dusting,
//! darknet sales). Injected patterns are funded by their own coinbases so
//! the background is never rewritten, except dusting, which by definition
//! touches a background wallet.
//!
//! Everything is driven by ChaCha8 streams seeded from `u64`s, so the same
//! parameters and seeds always give byte-identical ledgers.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::io::{Read, Write};

use chrono::{NaiveDate, NaiveTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::Listing;
use crate::model::{
    validate_ledger, Amount, Ledger, OutPoint, Transaction, TxOutput, Txid, ValidationErrors,
    Window, SATS_PER_BTC,
};

/// Smallest non-dust output the generator creates.
pub const MIN_OUTPUT: u64 = 546;
pub const MIN_FEE: u64 = 100;
pub const MAX_FEE: u64 = 10_000;
/// Share of fundable single-input slots emitted as coinbases to keep fresh
/// coins flowing. Coinbases count as one input, so this leaves the shape
/// distribution untouched.
const COINBASE_RATE: f64 = 0.02;
const WALLET_TRIES: usize = 16;

/// Round denominations drawn by the background amount model.
pub const ROUND_DENOMINATIONS: [u64; 8] = [
    100_000,       // 0.001
    500_000,       // 0.005
    1_000_000,     // 0.01
    5_000_000,     // 0.05
    10_000_000,    // 0.1
    50_000_000,    // 0.5
    100_000_000,   // 1
    200_000_000,   // 2
];
const SPECIFIC_RANGE: (u64, u64) = (10_000, 200_000_000);
const COINBASE_RANGE: (u64, u64) = (5 * SATS_PER_BTC, 50 * SATS_PER_BTC);

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("infeasible parameters: {0}")]
    InfeasibleParams(String),
    #[error("wallet {0} does not exist")]
    UnknownWallet(u32),
    #[error("wallet {0} has no fully spent address")]
    NoSpentAddress(u32),
    #[error("wallet {0} has no address holding an unspent output")]
    NoActiveAddress(u32),
    #[error("not enough room in the window: {0}")]
    NoRoom(String),
    #[error(transparent)]
    Ledger(#[from] ValidationErrors),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeProb {
    pub inputs: usize,
    pub outputs: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmountModel {
    pub round_weight: f64,
    pub specific_weight: f64,
}

impl Default for AmountModel {
    fn default() -> Self {
        AmountModel {
            round_weight: 0.7,
            specific_weight: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub seed: u64,
    pub n_background_tx: usize,
    pub chainlet_distribution: Vec<ShapeProb>,
    pub wallet_count: usize,
    pub amount_model: AmountModel,
    pub window: Window,
}

/// Shape distribution with the one-input/two-output cell at 0.5704 and
/// most mass in the two-output column. Only that cell is an observed
/// figure; the remainder is an illustrative fill that keeps expected
/// outputs above expected inputs so the UTXO set grows.
pub fn reference_distribution() -> Vec<ShapeProb> {
    [
        ((1, 1), 0.0850),
        ((1, 2), 0.5704),
        ((1, 3), 0.0200),
        ((1, 4), 0.0050),
        ((1, 5), 0.0030),
        ((1, 6), 0.0070),
        ((2, 1), 0.0500),
        ((2, 2), 0.1000),
        ((2, 3), 0.0050),
        ((3, 1), 0.0300),
        ((3, 2), 0.0400),
        ((4, 1), 0.0150),
        ((4, 2), 0.0150),
        ((5, 1), 0.0080),
        ((5, 2), 0.0080),
        ((6, 1), 0.0186),
        ((6, 2), 0.0200),
    ]
    .into_iter()
    .map(|((inputs, outputs), probability)| ShapeProb {
        inputs,
        outputs,
        probability,
    })
    .collect()
}

impl GenParams {
    /// Reference distribution, 200 wallets, default amount model.
    pub fn new(seed: u64, n_background_tx: usize, window: Window) -> Self {
        GenParams {
            seed,
            n_background_tx,
            chainlet_distribution: reference_distribution(),
            wallet_count: 200,
            amount_model: AmountModel::default(),
            window,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::InvalidParams(m));
        if self.window.is_empty() {
            return bad(format!(
                "window [{}, {}) is empty",
                self.window.start, self.window.end
            ));
        }
        if self.wallet_count == 0 {
            return bad("wallet_count must be positive".into());
        }
        let AmountModel {
            round_weight,
            specific_weight,
        } = self.amount_model;
        if !(round_weight >= 0.0 && specific_weight >= 0.0) || round_weight + specific_weight <= 0.0
        {
            return bad("amount weights must be non-negative and not both zero".into());
        }
        if self.chainlet_distribution.is_empty() {
            return bad("chainlet distribution is empty".into());
        }
        let mut total = 0.0;
        let mut seen = HashSet::new();
        for s in &self.chainlet_distribution {
            if s.inputs == 0 || s.outputs == 0 {
                return bad(format!("shape ({},{}) needs inputs and outputs", s.inputs, s.outputs));
            }
            if s.probability.is_nan() || s.probability < 0.0 {
                return bad(format!("negative probability for ({},{})", s.inputs, s.outputs));
            }
            if !seen.insert((s.inputs, s.outputs)) {
                return bad(format!("shape ({},{}) listed twice", s.inputs, s.outputs));
            }
            total += s.probability;
        }
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("distribution sums to {total}, expected 1"));
        }
        let single: f64 = self
            .chainlet_distribution
            .iter()
            .filter(|s| s.inputs == 1)
            .map(|s| s.probability)
            .sum();
        if self.n_background_tx > 0 && single <= 0.0 {
            return Err(GenError::InfeasibleParams(
                "no probability mass on single-input shapes, so no coinbase can bootstrap the UTXO set"
                    .into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Peeling,
    Mixing,
    Ransom,
    Dusting,
    Sale,
}

impl PatternKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PatternKind::Peeling => "peeling",
            PatternKind::Mixing => "mixing",
            PatternKind::Ransom => "ransom",
            PatternKind::Dusting => "dusting",
            PatternKind::Sale => "sale",
        }
    }
}

impl std::str::FromStr for PatternKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "peeling" => PatternKind::Peeling,
            "mixing" => PatternKind::Mixing,
            "ransom" => PatternKind::Ransom,
            "dusting" => PatternKind::Dusting,
            "sale" => PatternKind::Sale,
            other => return Err(format!("unknown pattern kind {other:?}")),
        })
    }
}

/// One injected pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternLabel {
    pub kind: PatternKind,
    /// Core transactions in pattern order (chain order, round order,
    /// `[t1, t2]` for ransom, `[dust, co-spend]` for dusting).
    pub txids: Vec<Txid>,
    pub addresses: BTreeSet<String>,
    /// Coinbases created only to fund the pattern.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub funding_txids: Vec<Txid>,
    pub params: serde_json::Value,
}

/// Ground truth shipped next to a synthetic ledger.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabels {
    pub patterns: BTreeMap<String, PatternLabel>,
    /// Owning wallet of every background address.
    #[serde(default)]
    pub wallets: BTreeMap<String, u32>,
}

impl GroundTruthLabels {
    pub fn of_kind(&self, kind: PatternKind) -> impl Iterator<Item = (&String, &PatternLabel)> {
        self.patterns.iter().filter(move |(_, p)| p.kind == kind)
    }

    /// Every labeled txid must exist in `ledger`.
    pub fn check_against(&self, ledger: &Ledger) -> Result<(), String> {
        for (id, p) in &self.patterns {
            for t in p.txids.iter().chain(&p.funding_txids) {
                if ledger.get(t).is_none() {
                    return Err(format!("pattern {id} references missing tx {t}"));
                }
            }
        }
        Ok(())
    }

    pub fn entity_count(&self) -> Option<usize> {
        let ids: BTreeSet<u32> = self.wallets.values().copied().collect();
        (!ids.is_empty()).then_some(ids.len())
    }
}

pub fn write_labels<W: Write>(labels: &GroundTruthLabels, mut out: W) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, labels)?;
    out.write_all(b"\n")
}

pub fn read_labels<R: Read>(reader: R) -> serde_json::Result<GroundTruthLabels> {
    serde_json::from_reader(reader)
}

#[derive(Debug, Clone)]
struct Utxo {
    outpoint: OutPoint,
    amount: u64,
}

/// A synthetic ledger under construction plus its ground truth.
#[derive(Debug, Clone)]
pub struct SynthLedger {
    seed: u64,
    window: Window,
    txs: Vec<Transaction>,
    labels: GroundTruthLabels,
    wallet_count: usize,
    tx_counter: u64,
    pattern_counter: u32,
    converted_shapes: usize,
}

fn txid_for(seed: u64, counter: u64, tag: &str) -> Txid {
    let mut h = Sha256::new();
    h.update(b"chaintrace-synth");
    h.update(seed.to_le_bytes());
    h.update(counter.to_le_bytes());
    h.update(tag.as_bytes());
    Txid(h.finalize().into())
}

fn uniform_amount(rng: &mut ChaCha8Rng, (lo, hi): (u64, u64)) -> u64 {
    rng.gen_range(lo..=hi)
}

fn draw_fee(rng: &mut ChaCha8Rng) -> u64 {
    rng.gen_range(MIN_FEE..=MAX_FEE)
}

struct Background<'p> {
    params: &'p GenParams,
    rng: ChaCha8Rng,
    pools: Vec<Vec<Utxo>>,
    /// Wallets ordered by mature pool size.
    by_size: BTreeSet<(usize, u32)>,
    pending: VecDeque<(i64, u32, Utxo)>,
    addr_counter: Vec<u32>,
    wallets: BTreeMap<String, u32>,
    txs: Vec<Transaction>,
    round_p: f64,
}

impl<'p> Background<'p> {
    fn fresh_address(&mut self, wallet: u32) -> String {
        let k = self.addr_counter[wallet as usize];
        self.addr_counter[wallet as usize] += 1;
        let a = format!("w{wallet:04}.{k:06}");
        self.wallets.insert(a.clone(), wallet);
        a
    }

    fn set_pool_len(&mut self, wallet: u32, old: usize) {
        self.by_size.remove(&(old, wallet));
        self.by_size
            .insert((self.pools[wallet as usize].len(), wallet));
    }

    fn mature(&mut self, now: i64) {
        while let Some((t, _, _)) = self.pending.front() {
            if *t >= now {
                break;
            }
            let (_, w, u) = self.pending.pop_front().expect("front exists");
            let old = self.pools[w as usize].len();
            self.pools[w as usize].push(u);
            self.set_pool_len(w, old);
        }
    }

    /// Removes `n` mature coins worth at least `need` from one wallet.
    fn take_inputs(&mut self, n: usize, need: u64) -> Option<(u32, Vec<Utxo>)> {
        let w_count = self.params.wallet_count as u32;
        let mut candidates: Vec<u32> = (0..WALLET_TRIES)
            .map(|_| self.rng.gen_range(0..w_count))
            .filter(|&w| self.pools[w as usize].len() >= n)
            .collect();
        candidates.extend(
            self.by_size
                .range((n, 0)..)
                .take(WALLET_TRIES)
                .map(|&(_, w)| w),
        );
        for w in candidates {
            let pool = &mut self.pools[w as usize];
            if pool.len() < n {
                continue;
            }
            let mut picks: Vec<usize> = rand::seq::index::sample(&mut self.rng, pool.len(), n).into_vec();
            let sum = |p: &[usize], pool: &[Utxo]| p.iter().map(|&i| pool[i].amount).sum::<u64>();
            if sum(&picks, pool) < need {
                let mut by_amount: Vec<usize> = (0..pool.len()).collect();
                by_amount.sort_by_key(|&i| std::cmp::Reverse(pool[i].amount));
                picks = by_amount[..n].to_vec();
                if sum(&picks, pool) < need {
                    continue;
                }
            }
            let old = pool.len();
            picks.sort_unstable_by(|a, b| b.cmp(a));
            let taken: Vec<Utxo> = picks.into_iter().map(|i| pool.swap_remove(i)).collect();
            self.set_pool_len(w, old);
            return Some((w, taken));
        }
        None
    }

    fn draw_payment(&mut self, max: u64) -> u64 {
        let v = if self.rng.gen_bool(self.round_p) {
            *ROUND_DENOMINATIONS.choose(&mut self.rng).expect("non-empty")
        } else {
            uniform_amount(&mut self.rng, SPECIFIC_RANGE)
        };
        if v <= max {
            v
        } else {
            self.rng.gen_range(MIN_OUTPUT..=max)
        }
    }

    fn push_tx(&mut self, time: i64, inputs: Vec<OutPoint>, outputs: Vec<(u32, TxOutput)>) {
        let txid = txid_for(self.params.seed, self.txs.len() as u64, "bg");
        for (vout, (w, out)) in outputs.iter().enumerate() {
            self.pending.push_back((
                time,
                *w,
                Utxo {
                    outpoint: OutPoint {
                        txid,
                        vout: vout as u32,
                    },
                    amount: out.amount.to_sat(),
                },
            ));
        }
        self.txs.push(Transaction {
            txid,
            time,
            inputs,
            outputs: outputs.into_iter().map(|(_, o)| o).collect(),
        });
    }

    fn coinbase(&mut self, time: i64, n_out: usize) {
        let miner = self.rng.gen_range(0..self.params.wallet_count as u32);
        let outs = (0..n_out)
            .map(|_| {
                let a = self.fresh_address(miner);
                let v = uniform_amount(&mut self.rng, COINBASE_RANGE);
                (miner, TxOutput::new(a, Amount::from_sat(v)))
            })
            .collect();
        self.push_tx(time, Vec::new(), outs);
    }

    fn spend(&mut self, time: i64, wallet: u32, inputs: Vec<Utxo>, n_out: usize) {
        let total: u64 = inputs.iter().map(|u| u.amount).sum();
        let budget = total - draw_fee(&mut self.rng);
        let w_count = self.params.wallet_count as u32;
        let mut outs: Vec<(u32, TxOutput)> = Vec::with_capacity(n_out);
        if n_out == 1 {
            let to = if self.rng.gen_bool(0.5) {
                wallet
            } else {
                self.rng.gen_range(0..w_count)
            };
            let a = self.fresh_address(to);
            outs.push((to, TxOutput::new(a, Amount::from_sat(budget))));
        } else {
            let mut remaining = budget;
            for slot in 0..n_out - 1 {
                let reserve = MIN_OUTPUT * (n_out - slot - 1) as u64;
                let v = self.draw_payment(remaining - reserve);
                remaining -= v;
                let to = self.rng.gen_range(0..w_count);
                let a = self.fresh_address(to);
                outs.push((to, TxOutput::new(a, Amount::from_sat(v))));
            }
            let change = self.fresh_address(wallet);
            outs.push((wallet, TxOutput::new(change, Amount::from_sat(remaining))));
            outs.shuffle(&mut self.rng);
        }
        self.push_tx(time, inputs.into_iter().map(|u| u.outpoint).collect(), outs);
    }
}

/// Generates a background ledger. Shapes are sampled up front; a slot
/// whose shape cannot be funded yet is swapped with the next fundable shape
/// (single-input shapes are always fundable as coinbases), so the emitted
/// shape multiset equals the sampled one unless the tail runs dry.
pub fn gen_background(params: &GenParams) -> Result<SynthLedger, GenError> {
    params.validate()?;
    let n = params.n_background_tx;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let cumulative: Vec<f64> = params
        .chainlet_distribution
        .iter()
        .scan(0.0, |acc, s| {
            *acc += s.probability;
            Some(*acc)
        })
        .collect();
    let last_positive = params
        .chainlet_distribution
        .iter()
        .rposition(|s| s.probability > 0.0)
        .expect("distribution has mass");
    let mut shapes: Vec<(usize, usize)> = (0..n)
        .map(|_| {
            let u: f64 = rng.gen::<f64>() * cumulative[cumulative.len() - 1];
            let k = cumulative.partition_point(|&c| c <= u).min(last_positive);
            let s = &params.chainlet_distribution[k];
            (s.inputs, s.outputs)
        })
        .collect();
    let mut times: Vec<i64> = (0..n)
        .map(|_| rng.gen_range(params.window.start..params.window.end))
        .collect();
    times.sort_unstable();

    let AmountModel {
        round_weight,
        specific_weight,
    } = params.amount_model;
    let w = params.wallet_count;
    let mut bg = Background {
        params,
        rng,
        pools: vec![Vec::new(); w],
        by_size: (0..w as u32).map(|i| (0, i)).collect(),
        pending: VecDeque::new(),
        addr_counter: vec![0; w],
        wallets: BTreeMap::new(),
        txs: Vec::with_capacity(n),
        round_p: round_weight / (round_weight + specific_weight),
    };

    let mut converted = 0;
    for slot in 0..n {
        let t = times[slot];
        bg.mature(t);
        let mut done = false;
        for j in slot..n {
            let (i, o) = shapes[j];
            if i == 1 && bg.rng.gen_bool(COINBASE_RATE) {
                shapes.swap(slot, j);
                bg.coinbase(t, o);
                done = true;
                break;
            }
            let need = MAX_FEE + MIN_OUTPUT * o as u64;
            if let Some((wallet, inputs)) = bg.take_inputs(i, need) {
                shapes.swap(slot, j);
                bg.spend(t, wallet, inputs, o);
                done = true;
                break;
            }
            if i == 1 {
                shapes.swap(slot, j);
                bg.coinbase(t, o);
                done = true;
                break;
            }
        }
        if !done {
            // only multi-input shapes remain and no wallet can fund them
            converted += 1;
            let o = shapes[slot].1;
            bg.coinbase(t, o);
        }
    }

    Ok(SynthLedger {
        seed: params.seed,
        window: params.window,
        txs: bg.txs,
        labels: GroundTruthLabels {
            patterns: BTreeMap::new(),
            wallets: bg.wallets,
        },
        wallet_count: w,
        tx_counter: n as u64,
        pattern_counter: 0,
        converted_shapes: converted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeelingSpec {
    pub length: usize,
    pub start_amount: Amount,
    /// Share of the tracked remainder split off at each step, in `(0, 1)`.
    pub peel_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixingSpec {
    pub participants: usize,
    pub rounds: usize,
    pub denomination: Amount,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RansomSpec {
    pub ransom_amount: Amount,
    pub funding_inputs: usize,
    pub gap_seconds: i64,
    /// Probability that the payment carries a change output.
    pub change_probability: f64,
    /// Reuse a known black address instead of a fresh one.
    pub black_address: Option<String>,
}

/// Share of ransom payments whose payment transaction has a change output.
pub const RANSOM_CHANGE_PROBABILITY: f64 = 0.8606;

impl RansomSpec {
    pub fn new(ransom_amount: Amount, funding_inputs: usize, gap_seconds: i64) -> Self {
        RansomSpec {
            ransom_amount,
            funding_inputs,
            gap_seconds,
            change_probability: RANSOM_CHANGE_PROBABILITY,
            black_address: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DustingSpec {
    pub victim_wallet: u32,
    pub dust_amount: Amount,
}

/// Unix seconds of midnight UTC starting `day`.
pub fn day_start(day: NaiveDate) -> i64 {
    day.and_time(NaiveTime::MIN).and_utc().timestamp()
}

impl SynthLedger {
    pub fn window(&self) -> Window {
        self.window
    }

    pub fn labels(&self) -> &GroundTruthLabels {
        &self.labels
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.txs
    }

    pub fn wallet_count(&self) -> usize {
        self.wallet_count
    }

    /// Sampled shapes that had to be emitted as coinbases because no wallet
    /// could fund them.
    pub fn converted_shapes(&self) -> usize {
        self.converted_shapes
    }

    pub fn ledger(&self) -> Result<Ledger, GenError> {
        Ok(validate_ledger(self.txs.clone(), self.window)?)
    }

    pub fn into_parts(self) -> Result<(Ledger, GroundTruthLabels), GenError> {
        let ledger = validate_ledger(self.txs, self.window)?;
        Ok((ledger, self.labels))
    }

    fn next_pattern_id(&mut self, kind: PatternKind) -> String {
        self.pattern_counter += 1;
        format!("{}-{:04}", kind.as_str(), self.pattern_counter)
    }

    fn push(&mut self, seed: u64, time: i64, inputs: Vec<OutPoint>, outputs: Vec<TxOutput>) -> Txid {
        let txid = txid_for(self.seed ^ seed.rotate_left(17), self.tx_counter, "inj");
        self.tx_counter += 1;
        self.txs.push(Transaction {
            txid,
            time,
            inputs,
            outputs,
        });
        txid
    }

    fn record(&mut self, id: String, label: PatternLabel) -> String {
        self.labels.patterns.insert(id.clone(), label);
        id
    }

    /// Picks `count` strictly increasing timestamps inside
    /// `[lo, hi)` spaced between `min_gap` and `max_gap` seconds apart.
    fn schedule(
        rng: &mut ChaCha8Rng,
        lo: i64,
        hi: i64,
        count: usize,
        min_gap: i64,
        max_gap: i64,
    ) -> Result<Vec<i64>, GenError> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let steps = (count - 1) as i64;
        let room = hi - lo - 1;
        let max_gap = if steps == 0 { max_gap } else { max_gap.min(room / steps) };
        if room < 0 || (steps > 0 && max_gap < 1) {
            return Err(GenError::NoRoom(format!(
                "{count} timestamps do not fit in [{lo}, {hi})"
            )));
        }
        let min_gap = min_gap.clamp(1, max_gap.max(1));
        let mut gaps: Vec<i64> = (0..steps).map(|_| rng.gen_range(min_gap..=max_gap)).collect();
        let span: i64 = gaps.iter().sum();
        let first = rng.gen_range(lo..=hi - 1 - span);
        let mut out = vec![first];
        for g in gaps.drain(..) {
            out.push(out[out.len() - 1] + g);
        }
        Ok(out)
    }

    /// Appends a chain of `length` one-input/two-output transactions. Each
    /// step splits `peel_fraction` of the tracked remainder (floored to the
    /// satoshi) to a fresh address and carries the rest, minus the step
    /// fee, to a fresh change address. Returns `None` for an empty chain.
    pub fn inject_peeling_chain(&mut self, spec: PeelingSpec, seed: u64) -> Result<Option<String>, GenError> {
        if spec.length == 0 {
            return Ok(None);
        }
        if !(spec.peel_fraction > 0.0 && spec.peel_fraction < 1.0) {
            return Err(GenError::InvalidParams("peel_fraction must be in (0, 1)".into()));
        }
        let ppb = (spec.peel_fraction * 1e9).round() as u128;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fees: Vec<u64> = (0..spec.length).map(|_| draw_fee(&mut rng)).collect();
        let times = Self::schedule(&mut rng, self.window.start, self.window.end, spec.length + 1, 60, 3600)?;
        let id = self.next_pattern_id(PatternKind::Peeling);
        let tag = id.replace('-', "");

        let fee_total: u64 = fees.iter().sum();
        let funding = spec
            .start_amount
            .to_sat()
            .checked_add(fee_total)
            .ok_or_else(|| GenError::InvalidParams("start amount overflows".into()))?;
        let src = format!("{tag}-src");
        let cb = self.push(seed, times[0], vec![], vec![TxOutput::new(&src, Amount::from_sat(funding))]);
        let mut addresses = BTreeSet::from([src]);

        let mut prev = OutPoint { txid: cb, vout: 0 };
        let mut input_value = funding;
        let mut remaining = spec.start_amount.to_sat();
        let mut chain = Vec::with_capacity(spec.length);
        let mut peels = Vec::with_capacity(spec.length);
        for (k, fee) in fees.iter().enumerate() {
            let peel = (u128::from(remaining) * ppb / 1_000_000_000) as u64;
            let carry = input_value - peel - fee;
            let (pa, ca) = (format!("{tag}-p{k}"), format!("{tag}-c{k}"));
            let mut outs = vec![
                TxOutput::new(&pa, Amount::from_sat(peel)),
                TxOutput::new(&ca, Amount::from_sat(carry)),
            ];
            let carry_vout = if rng.gen_bool(0.5) {
                outs.swap(0, 1);
                0
            } else {
                1
            };
            let txid = self.push(seed, times[k + 1], vec![prev], outs);
            addresses.insert(pa);
            addresses.insert(ca);
            chain.push(txid);
            peels.push(peel);
            prev = OutPoint {
                txid,
                vout: carry_vout,
            };
            input_value = carry;
            remaining -= peel;
        }
        let label = PatternLabel {
            kind: PatternKind::Peeling,
            txids: chain,
            addresses,
            funding_txids: vec![cb],
            params: json!({
                "length": spec.length,
                "start_amount": spec.start_amount.to_sat(),
                "peel_fraction": spec.peel_fraction,
                "peels": peels,
                "seed": seed,
            }),
        };
        Ok(Some(self.record(id, label)))
    }

    /// Appends `rounds` mixing transactions, each with `participants`
    /// inputs and as many identical outputs to fresh addresses. Round `j`
    /// spends every output of round `j - 1`.
    pub fn inject_mixing_rounds(&mut self, spec: MixingSpec, seed: u64) -> Result<Option<String>, GenError> {
        if spec.rounds == 0 {
            return Ok(None);
        }
        let k = spec.participants;
        if k == 0 {
            return Err(GenError::InvalidParams("mixing needs at least one participant".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fee_shares: Vec<u64> = (0..spec.rounds).map(|_| rng.gen_range(100..=1_000)).collect();
        let needed: u64 = fee_shares[1..].iter().sum::<u64>() + MIN_OUTPUT;
        if spec.denomination.to_sat() < needed {
            return Err(GenError::InvalidParams(format!(
                "denomination must cover {needed} sat of later-round fees"
            )));
        }
        let times = Self::schedule(&mut rng, self.window.start, self.window.end, spec.rounds + 1, 600, 7200)?;
        let id = self.next_pattern_id(PatternKind::Mixing);
        let tag = id.replace('-', "");

        let denom = spec.denomination.to_sat();
        let funding: Vec<TxOutput> = (0..k)
            .map(|p| {
                // distinct per participant so the funding tx never looks like a round
                let jitter = (p as u64 + 1) * 1_000 + rng.gen_range(0..1_000);
                TxOutput::new(format!("{tag}-in{p}"), Amount::from_sat(denom + fee_shares[0] + jitter))
            })
            .collect();
        let mut addresses: BTreeSet<String> = funding.iter().map(|o| o.address.clone()).collect();
        let cb = self.push(seed, times[0], vec![], funding);

        let mut prev: Vec<OutPoint> = (0..k as u32).map(|vout| OutPoint { txid: cb, vout }).collect();
        let mut amount = denom;
        let mut rounds = Vec::with_capacity(spec.rounds);
        for r in 0..spec.rounds {
            if r > 0 {
                amount -= fee_shares[r];
            }
            let outs: Vec<TxOutput> = (0..k)
                .map(|p| TxOutput::new(format!("{tag}-r{}-{p}", r + 1), Amount::from_sat(amount)))
                .collect();
            addresses.extend(outs.iter().map(|o| o.address.clone()));
            let mut inputs = prev.clone();
            inputs.shuffle(&mut rng);
            let txid = self.push(seed, times[r + 1], inputs, outs);
            rounds.push(txid);
            prev = (0..k as u32).map(|vout| OutPoint { txid, vout }).collect();
        }
        let label = PatternLabel {
            kind: PatternKind::Mixing,
            txids: rounds,
            addresses,
            funding_txids: vec![cb],
            params: json!({
                "participants": k,
                "rounds": spec.rounds,
                "denomination": denom,
                "seed": seed,
            }),
        };
        Ok(Some(self.record(id, label)))
    }

    /// Appends a ransom payment: `t1` gathers `funding_inputs` small coins
    /// into a fresh address `a1`, and `gap_seconds` later `t2` pays the
    /// ransom from `a1` to the black address `a0`, with change to a fresh
    /// `a2` at `change_probability`.
    pub fn inject_ransom_pattern(&mut self, spec: &RansomSpec, seed: u64) -> Result<String, GenError> {
        let m = spec.funding_inputs;
        if m == 0 {
            return Err(GenError::InvalidParams("ransom needs at least one funding input".into()));
        }
        if spec.gap_seconds < 0 {
            return Err(GenError::InvalidParams("gap must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&spec.change_probability) {
            return Err(GenError::InvalidParams("change probability must be in [0, 1]".into()));
        }
        let ransom = spec.ransom_amount.to_sat();
        if ransom < MIN_OUTPUT {
            return Err(GenError::InvalidParams("ransom below dust".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fee1 = draw_fee(&mut rng);
        let fee2 = draw_fee(&mut rng);
        let change = rng
            .gen_bool(spec.change_probability)
            .then(|| (ransom / 100).max(MIN_OUTPUT) + rng.gen_range(0..=ransom / 4));

        // coinbase, t1, t2
        let lead = rng.gen_range(1..=600);
        let lo = self.window.start;
        let latest_cb = self.window.end - 1 - spec.gap_seconds - lead;
        if latest_cb < lo {
            return Err(GenError::NoRoom(format!(
                "a {}s ransom gap does not fit in the window",
                spec.gap_seconds
            )));
        }
        let t_cb = rng.gen_range(lo..=latest_cb);
        let t1 = t_cb + lead;
        let t2 = t1 + spec.gap_seconds;

        let id = self.next_pattern_id(PatternKind::Ransom);
        let tag = id.replace('-', "");
        let a1_value = ransom + fee2 + change.unwrap_or(0);
        let total = a1_value + fee1;
        if total < MIN_OUTPUT * m as u64 {
            return Err(GenError::InvalidParams("ransom too small to split across the funding inputs".into()));
        }
        let parts = split_amount(&mut rng, total, m);
        let funding: Vec<TxOutput> = parts
            .iter()
            .enumerate()
            .map(|(j, &v)| TxOutput::new(format!("{tag}-f{j}"), Amount::from_sat(v)))
            .collect();
        let mut addresses: BTreeSet<String> = funding.iter().map(|o| o.address.clone()).collect();
        let cb = self.push(seed, t_cb, vec![], funding);

        let a1 = format!("{tag}-a1");
        let tx1 = self.push(
            seed,
            t1,
            (0..m as u32).map(|vout| OutPoint { txid: cb, vout }).collect(),
            vec![TxOutput::new(&a1, Amount::from_sat(a1_value))],
        );
        let a0 = spec.black_address.clone().unwrap_or_else(|| format!("{tag}-a0"));
        let mut outs = vec![TxOutput::new(&a0, Amount::from_sat(ransom))];
        if let Some(c) = change {
            let a2 = format!("{tag}-a2");
            outs.push(TxOutput::new(&a2, Amount::from_sat(c)));
            addresses.insert(a2);
            outs.shuffle(&mut rng);
        }
        let tx2 = self.push(seed, t2, vec![OutPoint { txid: tx1, vout: 0 }], outs);
        addresses.insert(a0.clone());
        addresses.insert(a1);
        let label = PatternLabel {
            kind: PatternKind::Ransom,
            txids: vec![tx1, tx2],
            addresses,
            funding_txids: vec![cb],
            params: json!({
                "ransom_amount": ransom,
                "funding_inputs": m,
                "gap_seconds": spec.gap_seconds,
                "change": change,
                "black_address": a0,
                "seed": seed,
            }),
        };
        Ok(self.record(id, label))
    }

    /// Sends dust to one of the victim's fully spent addresses `a1`; later the
    /// victim's wallet co-spends that dust with a coin held at an active
    /// address `a2`, linking the two under the multi-input heuristic.
    pub fn inject_dusting(&mut self, spec: DustingSpec, seed: u64) -> Result<String, GenError> {
        let victim = spec.victim_wallet;
        if victim as usize >= self.wallet_count {
            return Err(GenError::UnknownWallet(victim));
        }
        let dust = spec.dust_amount.to_sat();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let ledger_view = validate_ledger(self.txs.clone(), self.window)?;
        let mut spent_at: HashMap<&str, i64> = HashMap::new();
        let mut created_at: HashMap<OutPoint, i64> = HashMap::new();
        for tx in ledger_view.transactions() {
            for (v, _) in tx.outputs.iter().enumerate() {
                created_at.insert(OutPoint { txid: tx.txid, vout: v as u32 }, tx.time);
            }
            for i in &tx.inputs {
                let a = ledger_view.resolve(i).expect("valid").address.as_str();
                let e = spent_at.entry(a).or_insert(tx.time);
                *e = (*e).max(tx.time);
            }
        }
        let owned = |a: &str| self.labels.wallets.get(a) == Some(&victim);
        let utxos = ledger_view.utxos();
        let holding: BTreeSet<&str> = utxos.iter().map(|(_, o)| o.address.as_str()).collect();
        let mut spent: Vec<&str> = spent_at
            .keys()
            .copied()
            .filter(|a| owned(a) && !holding.contains(a))
            .collect();
        spent.sort_unstable();
        let a1 = *spent.choose(&mut rng).ok_or(GenError::NoSpentAddress(victim))?;
        let active: Vec<(OutPoint, &TxOutput)> = utxos
            .iter()
            .filter(|(_, o)| owned(&o.address) && o.amount.to_sat() > MAX_FEE + MIN_OUTPUT)
            .map(|(op, o)| (*op, *o))
            .collect();
        let (a2_op, a2_out) = *active.choose(&mut rng).ok_or(GenError::NoActiveAddress(victim))?;
        let (a1, a2) = (a1.to_owned(), a2_out.address.clone());
        let a2_value = a2_out.amount.to_sat();

        let lo = spent_at[a1.as_str()].max(created_at[&a2_op]) + 1;
        let times = Self::schedule(&mut rng, lo, self.window.end, 3, 1, 3600)?;

        let id = self.next_pattern_id(PatternKind::Dusting);
        let tag = id.replace('-', "");
        let atk = format!("{tag}-atk");
        let atk_funds = dust + 1_000_000;
        let cb = self.push(seed, times[0], vec![], vec![TxOutput::new(&atk, Amount::from_sat(atk_funds))]);
        let fee = draw_fee(&mut rng);
        let atk_change = format!("{tag}-atk2");
        let dust_tx = self.push(
            seed,
            times[1],
            vec![OutPoint { txid: cb, vout: 0 }],
            vec![
                TxOutput::new(&a1, Amount::from_sat(dust)),
                TxOutput::new(&atk_change, Amount::from_sat(atk_funds - dust - fee)),
            ],
        );
        let sweep = format!("{tag}-v");
        let fee = draw_fee(&mut rng);
        let mut inputs = vec![OutPoint { txid: dust_tx, vout: 0 }, a2_op];
        inputs.shuffle(&mut rng);
        let victim_tx = self.push(
            seed,
            times[2],
            inputs,
            vec![TxOutput::new(&sweep, Amount::from_sat(a2_value + dust - fee))],
        );
        self.labels.wallets.insert(sweep, victim);
        let label = PatternLabel {
            kind: PatternKind::Dusting,
            txids: vec![dust_tx, victim_tx],
            addresses: BTreeSet::from([a1.clone(), a2.clone(), atk, atk_change]),
            funding_txids: vec![cb],
            params: json!({
                "victim_wallet": victim,
                "dust_amount": dust,
                "spent_address": a1,
                "active_address": a2,
                "seed": seed,
            }),
        };
        Ok(self.record(id, label))
    }

    /// Appends one transaction on the listing's UTC day paying exactly the
    /// listing price, with `shape.0` inputs and `shape.1` outputs.
    pub fn inject_sale(&mut self, listing: &Listing, shape: (usize, usize), seed: u64) -> Result<String, GenError> {
        let (n_in, n_out) = shape;
        if n_in == 0 || n_out == 0 {
            return Err(GenError::InvalidParams("sale shape needs inputs and outputs".into()));
        }
        let price = listing.price.to_sat();
        let day = Window::new(day_start(listing.day), day_start(listing.day) + 86_400);
        let span = day.intersect(&self.window);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let times = Self::schedule(&mut rng, span.start, span.end, 2, 1, 3600)
            .map_err(|_| GenError::NoRoom(format!("listing day {} is outside the window", listing.day)))?;

        let id = self.next_pattern_id(PatternKind::Sale);
        let tag = id.replace('-', "");
        let mut others: Vec<u64> = Vec::with_capacity(n_out - 1);
        while others.len() < n_out - 1 {
            let v = uniform_amount(&mut rng, (10_000, 50_000_000));
            if v != price {
                others.push(v);
            }
        }
        let fee = draw_fee(&mut rng);
        let total = price + others.iter().sum::<u64>() + fee;
        let mut parts = split_amount(&mut rng, total, n_in);
        // funding outputs land on the same day; keep them off the price
        for j in 0..parts.len() {
            if parts[j] == price && parts.len() > 1 {
                let k = (j + 1) % parts.len();
                parts[j] -= 1;
                parts[k] += 1;
            }
        }
        let funding: Vec<TxOutput> = parts
            .iter()
            .enumerate()
            .map(|(j, &v)| TxOutput::new(format!("{tag}-b{j}"), Amount::from_sat(v)))
            .collect();
        let cb = self.push(seed, times[0], vec![], funding);
        let vendor = format!("{tag}-vendor");
        let mut outs = vec![TxOutput::new(&vendor, Amount::from_sat(price))];
        outs.extend(
            others
                .iter()
                .enumerate()
                .map(|(k, &v)| TxOutput::new(format!("{tag}-o{k}"), Amount::from_sat(v))),
        );
        outs.shuffle(&mut rng);
        let sale = self.push(
            seed,
            times[1],
            (0..n_in as u32).map(|vout| OutPoint { txid: cb, vout }).collect(),
            outs,
        );
        let label = PatternLabel {
            kind: PatternKind::Sale,
            txids: vec![sale],
            addresses: BTreeSet::from([vendor]),
            funding_txids: vec![cb],
            params: json!({
                "day": listing.day.format("%Y-%m-%d").to_string(),
                "item_id": listing.item_id,
                "price": price,
                "shape": [n_in, n_out],
                "seed": seed,
            }),
        };
        Ok(self.record(id, label))
    }

    /// Spends every coin a wallet still holds in one transaction to a fresh
    /// address of the same wallet. Unlabeled background activity.
    pub fn sweep_wallet(&mut self, wallet: u32, seed: u64) -> Result<Option<Txid>, GenError> {
        if wallet as usize >= self.wallet_count {
            return Err(GenError::UnknownWallet(wallet));
        }
        let view = validate_ledger(self.txs.clone(), self.window)?;
        let coins: Vec<(OutPoint, u64)> = view
            .utxos()
            .into_iter()
            .filter(|(_, o)| self.labels.wallets.get(&o.address) == Some(&wallet))
            .map(|(op, o)| (op, o.amount.to_sat()))
            .collect();
        if coins.is_empty() {
            return Ok(None);
        }
        let total: u64 = coins.iter().map(|c| c.1).sum();
        let latest = coins
            .iter()
            .map(|(op, _)| view.get(&op.txid).expect("utxo source").time)
            .max()
            .expect("non-empty");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Self::schedule(&mut rng, latest + 1, self.window.end, 1, 1, 1)?[0];
        let fee = draw_fee(&mut rng).min(total.saturating_sub(MIN_OUTPUT));
        let addr = format!("w{wallet:04}.sweep{}", self.tx_counter);
        self.labels.wallets.insert(addr.clone(), wallet);
        let txid = self.push(
            seed,
            t,
            coins.iter().map(|c| c.0).collect(),
            vec![TxOutput::new(addr, Amount::from_sat(total - fee))],
        );
        Ok(Some(txid))
    }
}

/// Per-kind settings used by [`inject_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioParams {
    pub peel_length: usize,
    pub peel_fraction: f64,
    pub mix_participants: usize,
    pub mix_rounds: usize,
    pub mix_denomination: Amount,
    pub ransom_inputs: usize,
    pub ransom_gap: i64,
    /// Each ransom gap is drawn uniformly from `ransom_gap ± ransom_jitter`.
    pub ransom_jitter: i64,
    pub dust_amount: Amount,
    pub sale_shape: (usize, usize),
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            peel_length: 5,
            peel_fraction: 0.1,
            mix_participants: 20,
            mix_rounds: 2,
            mix_denomination: Amount::from_sat(10_000_000),
            ransom_inputs: 150,
            ransom_gap: 86_400,
            ransom_jitter: 10_800,
            dust_amount: Amount::from_sat(MIN_OUTPUT),
            sale_shape: (1, 2),
        }
    }
}

/// `KIND[:COUNT]`, e.g. `ransom:20`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InjectRequest {
    pub kind: PatternKind,
    pub count: Option<usize>,
}

impl std::str::FromStr for InjectRequest {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, count) = match s.split_once(':') {
            Some((k, c)) => (k, Some(c.parse::<usize>().map_err(|e| format!("bad count in {s:?}: {e}"))?)),
            None => (s, None),
        };
        Ok(InjectRequest {
            kind: kind.parse()?,
            count,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub pattern_ids: Vec<String>,
    /// Listings synthesized for sale injections when none were supplied.
    pub synthesized_listings: Vec<Listing>,
}

/// Applies injection requests in order. Each injection gets its own seed
/// drawn from `seed`. Sale requests consume `listings` in order (all of
/// them when no count is given); without listings, oddly priced listings
/// are synthesized on random days of the window.
pub fn inject_scenario(
    s: &mut SynthLedger,
    requests: &[InjectRequest],
    p: &ScenarioParams,
    listings: &[Listing],
    seed: u64,
) -> Result<ScenarioOutcome, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce7_a210_0dd5_eed5);
    let mut ids = Vec::new();
    let mut synthesized = Vec::new();
    let mut next_listing = 0usize;
    for req in requests {
        let count = match (req.kind, req.count) {
            (PatternKind::Sale, None) if !listings.is_empty() => listings.len().saturating_sub(next_listing),
            (_, c) => c.unwrap_or(1),
        };
        for _ in 0..count {
            let sub = rng.gen::<u64>();
            let id = match req.kind {
                PatternKind::Peeling => {
                    let start = rng.gen_range(SATS_PER_BTC..=20 * SATS_PER_BTC);
                    s.inject_peeling_chain(
                        PeelingSpec {
                            length: p.peel_length,
                            start_amount: Amount::from_sat(start),
                            peel_fraction: p.peel_fraction,
                        },
                        sub,
                    )?
                }
                PatternKind::Mixing => s.inject_mixing_rounds(
                    MixingSpec {
                        participants: p.mix_participants,
                        rounds: p.mix_rounds,
                        denomination: p.mix_denomination,
                    },
                    sub,
                )?,
                PatternKind::Ransom => {
                    let amount = rng.gen_range(SATS_PER_BTC / 10..=10 * SATS_PER_BTC);
                    let jitter = p.ransom_jitter.abs();
                    let gap = (p.ransom_gap + rng.gen_range(-jitter..=jitter)).max(0);
                    Some(s.inject_ransom_pattern(&RansomSpec::new(Amount::from_sat(amount), p.ransom_inputs, gap), sub)?)
                }
                PatternKind::Dusting => {
                    let w = s.wallet_count as u32;
                    let first = rng.gen_range(0..w);
                    let mut out = None;
                    for k in 0..w {
                        let spec = DustingSpec {
                            victim_wallet: (first + k) % w,
                            dust_amount: p.dust_amount,
                        };
                        match s.inject_dusting(spec, sub) {
                            Ok(id) => {
                                out = Some(id);
                                break;
                            }
                            Err(GenError::NoSpentAddress(_) | GenError::NoActiveAddress(_)) => continue,
                            Err(e) => return Err(e),
                        }
                    }
                    Some(out.ok_or_else(|| {
                        GenError::InfeasibleParams("no wallet has both a spent and an active address".into())
                    })?)
                }
                PatternKind::Sale => {
                    let listing = if listings.is_empty() {
                        let l = synth_listing(&mut rng, s.window, synthesized.len())?;
                        synthesized.push(l.clone());
                        l
                    } else {
                        let l = listings.get(next_listing).cloned().ok_or_else(|| {
                            GenError::InvalidParams(format!("only {} listings supplied", listings.len()))
                        })?;
                        next_listing += 1;
                        l
                    };
                    Some(s.inject_sale(&listing, p.sale_shape, sub)?)
                }
            };
            ids.extend(id);
        }
    }
    Ok(ScenarioOutcome {
        pattern_ids: ids,
        synthesized_listings: synthesized,
    })
}

fn synth_listing(rng: &mut ChaCha8Rng, window: Window, k: usize) -> Result<Listing, GenError> {
    if window.len_seconds() < 3 {
        return Err(GenError::NoRoom("window too short for a sale".into()));
    }
    let t = rng.gen_range(window.start..window.end - 2);
    let day = chrono::DateTime::from_timestamp(t.div_euclid(86_400) * 86_400, 0)
        .ok_or_else(|| GenError::InvalidParams("timestamp out of range".into()))?
        .date_naive();
    // six significant decimals, never a round 0.001 multiple
    let mut price = rng.gen_range(1_000..500_000u64) * 100;
    if price % 100_000 == 0 {
        price += 100;
    }
    Ok(Listing {
        day,
        market: "synth".into(),
        vendor: format!("vendor-{}", k % 7),
        item_id: format!("item-{k:04}"),
        price: Amount::from_sat(price),
    })
}

/// Splits `total` into `n` parts of at least `MIN_OUTPUT` each
/// (`total >= n * MIN_OUTPUT` required).
fn split_amount(rng: &mut ChaCha8Rng, total: u64, n: usize) -> Vec<u64> {
    let floor = MIN_OUTPUT * n as u64;
    debug_assert!(total >= floor);
    let spare = total - floor;
    let weights: Vec<u64> = (0..n).map(|_| rng.gen_range(1..=1_000_000)).collect();
    let wsum: u64 = weights.iter().sum();
    let mut parts: Vec<u64> = weights
        .iter()
        .map(|&w| MIN_OUTPUT + (u128::from(spare) * u128::from(w) / u128::from(wsum)) as u64)
        .collect();
    let assigned: u64 = parts.iter().sum();
    parts[n - 1] += total - assigned;
    parts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ledger_to_bytes;
    use crate::metrics::chainlet_matrix;

    const DAY: i64 = 86_400;
    const T0: i64 = 1_420_070_400; // 2015-01-01

    fn params(seed: u64, n: usize) -> GenParams {
        GenParams::new(seed, n, Window::new(T0, T0 + 30 * DAY))
    }

    #[test]
    fn deterministic_bytes() {
        let a = gen_background(&params(1, 2_000)).unwrap().into_parts().unwrap().0;
        let b = gen_background(&params(1, 2_000)).unwrap().into_parts().unwrap().0;
        let c = gen_background(&params(2, 2_000)).unwrap().into_parts().unwrap().0;
        assert_eq!(ledger_to_bytes(&a), ledger_to_bytes(&b));
        assert_ne!(ledger_to_bytes(&a), ledger_to_bytes(&c));
        assert_eq!(a.len(), 2_000);
    }

    #[test]
    fn single_shape_distribution() {
        let mut p = params(3, 10_000);
        p.chainlet_distribution = vec![ShapeProb {
            inputs: 1,
            outputs: 2,
            probability: 1.0,
        }];
        let (ledger, _) = gen_background(&p).unwrap().into_parts().unwrap();
        let m = chainlet_matrix(&ledger, ledger.window(), 6);
        assert!((0.98..=1.0).contains(&m.fraction(1, 2)), "{}", m.fraction(1, 2));
    }

    #[test]
    fn reference_distribution_is_reproduced() {
        let s = gen_background(&params(13, 10_000)).unwrap();
        assert!(s.converted_shapes() < 100, "{}", s.converted_shapes());
        let (ledger, _) = s.into_parts().unwrap();
        let m = chainlet_matrix(&ledger, ledger.window(), 6);
        for sp in reference_distribution() {
            let got = m.fraction(sp.inputs, sp.outputs);
            assert!((got - sp.probability).abs() <= 0.02, "({},{}) {got} vs {}", sp.inputs, sp.outputs, sp.probability);
        }
    }

    #[test]
    fn wallets_spend_only_their_own_coins() {
        let s = gen_background(&params(4, 3_000)).unwrap();
        let wallets = s.labels().wallets.clone();
        let (ledger, _) = s.into_parts().unwrap();
        for tx in ledger.transactions() {
            let owners: BTreeSet<u32> = tx
                .inputs
                .iter()
                .map(|i| wallets[&ledger.resolve(i).unwrap().address])
                .collect();
            assert!(owners.len() <= 1);
        }
    }

    #[test]
    fn param_validation() {
        let mut p = params(1, 10);
        p.chainlet_distribution[0].probability += 0.01;
        assert!(matches!(gen_background(&p), Err(GenError::InvalidParams(_))));
        let mut p = params(1, 10);
        p.chainlet_distribution = vec![ShapeProb {
            inputs: 2,
            outputs: 2,
            probability: 1.0,
        }];
        assert!(matches!(gen_background(&p), Err(GenError::InfeasibleParams(_))));
        let mut p = params(1, 10);
        p.amount_model = AmountModel {
            round_weight: 0.0,
            specific_weight: 0.0,
        };
        assert!(matches!(gen_background(&p), Err(GenError::InvalidParams(_))));
        let mut p = params(1, 10);
        p.wallet_count = 0;
        assert!(gen_background(&p).is_err());
    }

    #[test]
    fn peeling_amounts() {
        let mut s = gen_background(&params(5, 200)).unwrap();
        let id = s
            .inject_peeling_chain(
                PeelingSpec {
                    length: 3,
                    start_amount: Amount::from_sat(SATS_PER_BTC),
                    peel_fraction: 0.1,
                },
                9,
            )
            .unwrap()
            .unwrap();
        let label = s.labels().patterns[&id].clone();
        assert_eq!(label.params["peels"], json!([10_000_000u64, 9_000_000u64, 8_100_000u64]));
        let (ledger, labels) = s.into_parts().unwrap();
        labels.check_against(&ledger).unwrap();
        let mut peel_outputs = Vec::new();
        for (k, t) in label.txids.iter().enumerate() {
            let tx = ledger.get(t).unwrap();
            assert_eq!(tx.shape(), (1, 2));
            let p = tx.outputs.iter().find(|o| o.address.ends_with(&format!("-p{k}"))).unwrap();
            peel_outputs.push(p.amount.to_sat());
        }
        assert_eq!(peel_outputs, vec![10_000_000, 9_000_000, 8_100_000]);
        let carries = label.addresses.iter().filter(|a| a.contains("-c")).count();
        assert_eq!(carries, 3);
    }

    #[test]
    fn empty_peeling_is_noop() {
        let mut s = gen_background(&params(5, 100)).unwrap();
        let before = s.transactions().len();
        let r = s
            .inject_peeling_chain(
                PeelingSpec {
                    length: 0,
                    start_amount: Amount::from_sat(SATS_PER_BTC),
                    peel_fraction: 0.1,
                },
                1,
            )
            .unwrap();
        assert!(r.is_none());
        assert_eq!(s.transactions().len(), before);
        assert!(s.labels().patterns.is_empty());
    }

    #[test]
    fn mixing_structure() {
        let mut s = gen_background(&params(6, 300)).unwrap();
        let id = s
            .inject_mixing_rounds(
                MixingSpec {
                    participants: 20,
                    rounds: 2,
                    denomination: Amount::from_sat(10_000_000),
                },
                3,
            )
            .unwrap()
            .unwrap();
        let label = s.labels().patterns[&id].clone();
        let (ledger, _) = s.into_parts().unwrap();
        assert_eq!(label.txids.len(), 2);
        let mut outs = BTreeSet::new();
        for t in &label.txids {
            let tx = ledger.get(t).unwrap();
            assert_eq!(tx.shape(), (20, 20));
            let amounts: BTreeSet<u64> = tx.outputs.iter().map(|o| o.amount.to_sat()).collect();
            assert_eq!(amounts.len(), 1);
            outs.extend(tx.outputs.iter().map(|o| o.address.clone()));
        }
        assert_eq!(outs.len(), 40);
        assert!(outs.iter().all(|a| label.addresses.contains(a)));
        let second = ledger.get(&label.txids[1]).unwrap();
        assert!(second.inputs.iter().all(|i| i.txid == label.txids[0]));
    }

    #[test]
    fn single_participant_mix_is_valid() {
        let mut s = gen_background(&params(6, 100)).unwrap();
        s.inject_mixing_rounds(
            MixingSpec {
                participants: 1,
                rounds: 3,
                denomination: Amount::from_sat(1_000_000),
            },
            3,
        )
        .unwrap();
        s.into_parts().unwrap();
    }

    #[test]
    fn ransom_structure() {
        let mut s = gen_background(&params(7, 300)).unwrap();
        let mut spec = RansomSpec::new(Amount::from_sat(5 * SATS_PER_BTC), 150, DAY);
        spec.change_probability = 1.0;
        let id = s.inject_ransom_pattern(&spec, 11).unwrap();
        let label = s.labels().patterns[&id].clone();
        let (ledger, _) = s.into_parts().unwrap();
        let t1 = ledger.get(&label.txids[0]).unwrap();
        let t2 = ledger.get(&label.txids[1]).unwrap();
        assert_eq!(t1.shape(), (150, 1));
        assert_eq!(t2.outputs.len(), 2);
        assert_eq!(t2.time - t1.time, DAY);
        assert!(t2
            .outputs
            .iter()
            .any(|o| o.amount.to_sat() == 5 * SATS_PER_BTC && o.address.ends_with("-a0")));
    }

    #[test]
    fn ransom_change_rate() {
        // 100 draws land within ±0.07 of the change rate
        let mut s = gen_background(&params(8, 100)).unwrap();
        let spec = RansomSpec::new(Amount::from_sat(SATS_PER_BTC), 3, DAY);
        let ids: Vec<String> = (0..100)
            .map(|k| s.inject_ransom_pattern(&spec, 1_000 + k).unwrap())
            .collect();
        let (ledger, labels) = s.into_parts().unwrap();
        let with_change = ids
            .iter()
            .filter(|id| ledger.get(&labels.patterns[*id].txids[1]).unwrap().outputs.len() == 2)
            .count();
        assert!((0.79..=0.93).contains(&(with_change as f64 / 100.0)), "{with_change}");
    }

    #[test]
    fn dusting_targets_spent_address() {
        let mut s = gen_background(&params(9, 3_000)).unwrap();
        let id = s
            .inject_dusting(
                DustingSpec {
                    victim_wallet: 4,
                    dust_amount: Amount::from_sat(546),
                },
                2,
            )
            .unwrap();
        let label = s.labels().patterns[&id].clone();
        let a1 = label.params["spent_address"].as_str().unwrap().to_owned();
        let (ledger, _) = s.into_parts().unwrap();
        let dust = ledger.get(&label.txids[0]).unwrap();
        assert!(dust
            .outputs
            .iter()
            .any(|o| o.address == a1 && o.amount.to_sat() == 546));
        // a1 was spent before the dust arrived
        assert!(ledger
            .transactions()
            .iter()
            .any(|t| t.time < dust.time && t.inputs.iter().any(|i| ledger.resolve(i).unwrap().address == a1)));
    }

    #[test]
    fn dusting_needs_spent_address() {
        // a single-tx ledger: every wallet address is unspent
        let mut p = params(10, 1);
        p.wallet_count = 1;
        let mut s = gen_background(&p).unwrap();
        let err = s
            .inject_dusting(
                DustingSpec {
                    victim_wallet: 0,
                    dust_amount: Amount::from_sat(546),
                },
                1,
            )
            .unwrap_err();
        assert!(matches!(err, GenError::NoSpentAddress(0)));
        assert!(matches!(
            s.inject_dusting(
                DustingSpec {
                    victim_wallet: 7,
                    dust_amount: Amount::from_sat(546)
                },
                1
            ),
            Err(GenError::UnknownWallet(7))
        ));
    }

    #[test]
    fn sale_lands_on_listing_day() {
        let mut s = gen_background(&params(11, 500)).unwrap();
        let listing = Listing {
            day: NaiveDate::from_ymd_opt(2015, 1, 10).unwrap(),
            market: "m".into(),
            vendor: "v".into(),
            item_id: "i".into(),
            price: Amount::from_sat(6_745_900),
        };
        let id = s.inject_sale(&listing, (3, 5), 1).unwrap();
        let label = s.labels().patterns[&id].clone();
        let (ledger, _) = s.into_parts().unwrap();
        let tx = ledger.get(&label.txids[0]).unwrap();
        assert_eq!(tx.shape(), (3, 5));
        let start = day_start(listing.day);
        assert!((start..start + DAY).contains(&tx.time));
        assert_eq!(tx.outputs.iter().filter(|o| o.amount.to_sat() == 6_745_900).count(), 1);

        let outside = Listing {
            day: NaiveDate::from_ymd_opt(2016, 1, 1).unwrap(),
            ..listing
        };
        let mut s = gen_background(&params(11, 10)).unwrap();
        assert!(matches!(s.inject_sale(&outside, (1, 2), 1), Err(GenError::NoRoom(_))));
    }

    #[test]
    fn labels_round_trip_json() {
        let mut s = gen_background(&params(12, 200)).unwrap();
        s.inject_ransom_pattern(&RansomSpec::new(Amount::from_sat(SATS_PER_BTC), 5, DAY), 1)
            .unwrap();
        let mut buf = Vec::new();
        write_labels(s.labels(), &mut buf).unwrap();
        assert_eq!(&read_labels(&buf[..]).unwrap(), s.labels());
    }

    #[test]
    fn scenario_runs_every_kind() {
        let mut s = gen_background(&params(14, 2_000)).unwrap();
        let reqs: Vec<InjectRequest> = ["ransom:3", "peeling:2", "mixing", "dusting:2", "sale:4"]
            .iter()
            .map(|r| r.parse().unwrap())
            .collect();
        let out = inject_scenario(&mut s, &reqs, &ScenarioParams::default(), &[], 5).unwrap();
        assert_eq!(out.pattern_ids.len(), 12);
        assert_eq!(out.synthesized_listings.len(), 4);
        assert!(out.synthesized_listings.iter().all(|l| l.price.to_sat() % 100_000 != 0));
        let (ledger, labels) = s.into_parts().unwrap();
        labels.check_against(&ledger).unwrap();
        assert!("bogus:1".parse::<InjectRequest>().is_err());
        assert!("ransom:x".parse::<InjectRequest>().is_err());
    }

    #[test]
    fn split_amount_conserves_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (total, n) in [(546 * 3, 3), (10_000_000, 150), (1_000, 1)] {
            let parts = split_amount(&mut rng, total, n);
            assert_eq!(parts.iter().sum::<u64>(), total);
            assert!(parts.iter().all(|&p| p >= MIN_OUTPUT));
        }
    }
}
