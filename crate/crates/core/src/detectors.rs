//! Structural detectors for ransom payments, peeling chains and mixing
//! rounds, and scoring against generator ground truth.
//!
//! All detectors are pure functions of a [`TxGraph`]. Output order is fixed
//! by window transaction order, so results do not depend on thread count.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use petgraph::unionfind::UnionFind;
use serde::Serialize;

use crate::graph::TxGraph;
use crate::model::{Amount, Txid};
use crate::par;
use crate::synthgen::{GroundTruthLabels, PatternKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RansomParams {
    pub min_t1_inputs: usize,
    pub max_t2_outputs: usize,
    pub gap_center: i64,
    pub gap_slack: i64,
    pub min_amount: Amount,
}

impl Default for RansomParams {
    fn default() -> Self {
        RansomParams {
            min_t1_inputs: 50,
            max_t2_outputs: 2,
            gap_center: 86_400,
            gap_slack: 21_600,
            min_amount: Amount::ZERO,
        }
    }
}

/// Our six-field encoding of the ransom motif.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RansomFeatures {
    pub t1_inputs: usize,
    pub t1_outputs: usize,
    pub t2_outputs: usize,
    pub gap_seconds: i64,
    /// Value of the `t1` outputs that `t2` spends.
    pub amount: Amount,
    pub change_present: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RansomCandidate {
    pub t1: Txid,
    pub t2: Txid,
    /// Largest `t2` output (first by index on ties).
    pub a0: String,
    pub features: RansomFeatures,
}

/// Pairs `(t1, t2)` where `t2` spends an output of `t1` and both sides fit
/// the parameterized motif. Ordered by `t2` time, then txids.
pub fn detect_ransom(graph: &TxGraph<'_>, params: &RansomParams) -> Vec<RansomCandidate> {
    let txs = graph.txs();
    let lo = params.gap_center.saturating_sub(params.gap_slack);
    let hi = params.gap_center.saturating_add(params.gap_slack);
    let mut found: Vec<(u32, u32, RansomCandidate)> = par::flat_map_range(txs.len(), |i| {
        let t1 = &txs[i];
        if t1.inputs.len() < params.min_t1_inputs {
            return Vec::new();
        }
        let mut spent_by: BTreeMap<u32, u64> = BTreeMap::new();
        for (v, o) in t1.outputs.iter().enumerate() {
            if let Some(s) = graph.spender(i as u32, v) {
                *spent_by.entry(s).or_default() += o.amount.to_sat();
            }
        }
        spent_by
            .into_iter()
            .filter_map(|(j, amount)| {
                let t2 = &txs[j as usize];
                let gap = t2.time - t1.time;
                let ok = t2.outputs.len() <= params.max_t2_outputs
                    && (lo..=hi).contains(&gap)
                    && amount >= params.min_amount.to_sat();
                if !ok {
                    return None;
                }
                let a0 = t2
                    .outputs
                    .iter()
                    .rev()
                    .max_by_key(|o| o.amount)
                    .map(|o| o.address.clone())
                    .unwrap_or_default();
                Some((
                    j,
                    i as u32,
                    RansomCandidate {
                        t1: t1.txid,
                        t2: t2.txid,
                        a0,
                        features: RansomFeatures {
                            t1_inputs: t1.inputs.len(),
                            t1_outputs: t1.outputs.len(),
                            t2_outputs: t2.outputs.len(),
                            gap_seconds: gap,
                            amount: Amount::from_sat(amount),
                            change_present: t2.outputs.len() == 2,
                        },
                    },
                ))
            })
            .collect()
    });
    found.sort_unstable_by_key(|(j, i, _)| (*j, *i));
    found.into_iter().map(|(_, _, c)| c).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeelingParams {
    pub min_length: usize,
    pub peel_fraction_max: f64,
}

impl Default for PeelingParams {
    fn default() -> Self {
        PeelingParams {
            min_length: 4,
            peel_fraction_max: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PeelingChain {
    /// Steps in spending order.
    pub txids: Vec<Txid>,
    pub peeled: Vec<Amount>,
}

/// For a peel step, the carry output index.
fn peel_step(graph: &TxGraph<'_>, t: u32, ppb: u128) -> Option<usize> {
    let tx = &graph.txs()[t as usize];
    if tx.inputs.len() != 1 || tx.outputs.len() != 2 {
        return None;
    }
    let input = graph.ledger().resolve(&tx.inputs[0])?.amount.to_sat();
    let (a, b) = (tx.outputs[0].amount.to_sat(), tx.outputs[1].amount.to_sat());
    if a == b {
        return None;
    }
    let (peel, carry) = if a < b { (a, 1) } else { (b, 0) };
    (u128::from(peel) * 1_000_000_000 <= ppb * u128::from(input)).then_some(carry)
}

fn fraction_ppb(f: f64) -> u128 {
    (f.clamp(0.0, 1.0) * 1e9).round() as u128
}

/// Maximal chains of one-input/two-output steps, each peeling at most
/// `peel_fraction_max` of its input as the strictly smaller output and
/// passing the larger one to the next step.
pub fn detect_peeling(graph: &TxGraph<'_>, params: &PeelingParams) -> Vec<PeelingChain> {
    let ppb = fraction_ppb(params.peel_fraction_max);
    let n = graph.tx_count();
    let carry: Vec<Option<usize>> = par::map_range(n, |t| peel_step(graph, t as u32, ppb));
    let next: Vec<Option<u32>> = par::map_range(n, |t| {
        let c = carry[t]?;
        let s = graph.spender(t as u32, c)?;
        carry[s as usize].is_some().then_some(s)
    });
    let mut has_prev = vec![false; n];
    for s in next.iter().flatten() {
        has_prev[*s as usize] = true;
    }
    let mut chains = Vec::new();
    for start in 0..n {
        if carry[start].is_none() || has_prev[start] {
            continue;
        }
        let mut steps = vec![start as u32];
        while let Some(s) = next[steps[steps.len() - 1] as usize] {
            steps.push(s);
        }
        if steps.len() < params.min_length.max(1) {
            continue;
        }
        let txs = graph.txs();
        chains.push(PeelingChain {
            txids: steps.iter().map(|&t| txs[t as usize].txid).collect(),
            peeled: steps
                .iter()
                .map(|&t| {
                    let tx = &txs[t as usize];
                    tx.outputs[1 - carry[t as usize].expect("step")].amount
                })
                .collect(),
        });
    }
    chains
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MixingParams {
    pub min_equal_outputs: usize,
    pub min_rounds: usize,
}

impl Default for MixingParams {
    fn default() -> Self {
        MixingParams {
            min_equal_outputs: 5,
            min_rounds: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MixingSequence {
    /// Rounds in `(time, txid)` order.
    pub txids: Vec<Txid>,
    /// Size of the largest equal-amount output group per round.
    pub equal_outputs: Vec<usize>,
}

fn largest_equal_group(graph: &TxGraph<'_>, t: usize) -> usize {
    let mut counts: HashMap<Amount, usize> = HashMap::new();
    for o in &graph.txs()[t].outputs {
        *counts.entry(o.amount).or_default() += 1;
    }
    counts.into_values().max().unwrap_or(0)
}

/// Transactions with at least `min_equal_outputs` identical-amount
/// outputs, grouped into sequences by spend links between them. A sequence
/// is one weakly connected component of qualifying rounds.
pub fn detect_mixing(graph: &TxGraph<'_>, params: &MixingParams) -> Vec<MixingSequence> {
    let n = graph.tx_count();
    let equal: Vec<usize> = par::map_range(n, |t| largest_equal_group(graph, t));
    let qualifies = |t: usize| equal[t] >= params.min_equal_outputs.max(1);
    let mut uf = UnionFind::<u32>::new(n);
    for (t, tx) in graph.txs().iter().enumerate() {
        if !qualifies(t) {
            continue;
        }
        for input in &tx.inputs {
            if let Some(s) = graph.source(input) {
                if qualifies(s as usize) {
                    uf.union(s, t as u32);
                }
            }
        }
    }
    let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for t in (0..n).filter(|&t| qualifies(t)) {
        groups.entry(uf.find(t as u32)).or_default().push(t as u32);
    }
    let mut seqs: Vec<(u32, MixingSequence)> = groups
        .into_values()
        .filter(|g| g.len() >= params.min_rounds.max(1))
        .map(|g| {
            (
                g[0],
                MixingSequence {
                    txids: g.iter().map(|&t| graph.txs()[t as usize].txid).collect(),
                    equal_outputs: g.iter().map(|&t| equal[t as usize]).collect(),
                },
            )
        })
        .collect();
    seqs.sort_unstable_by_key(|(first, _)| *first);
    seqs.into_iter().map(|(_, s)| s).collect()
}

/// Re-checks a ransom candidate against the motif.
pub fn verify_ransom(graph: &TxGraph<'_>, c: &RansomCandidate, params: &RansomParams) -> bool {
    let (Some(i), Some(j)) = (graph.tx_index(&c.t1), graph.tx_index(&c.t2)) else {
        return false;
    };
    let (t1, t2) = (&graph.txs()[i as usize], &graph.txs()[j as usize]);
    let spent: u64 = t2
        .inputs
        .iter()
        .filter(|op| op.txid == c.t1)
        .map(|op| t1.outputs[op.vout as usize].amount.to_sat())
        .sum();
    let gap = t2.time - t1.time;
    spent > 0
        && gap >= 0
        && gap == c.features.gap_seconds
        && gap.abs_diff(params.gap_center) <= params.gap_slack.unsigned_abs()
        && t1.inputs.len() >= params.min_t1_inputs
        && t2.outputs.len() <= params.max_t2_outputs
        && spent == c.features.amount.to_sat()
        && spent >= params.min_amount.to_sat()
}

/// Re-checks that every step peels within bound and feeds the next one.
pub fn verify_peeling(graph: &TxGraph<'_>, chain: &PeelingChain, params: &PeelingParams) -> bool {
    let ppb = fraction_ppb(params.peel_fraction_max);
    let idx: Option<Vec<u32>> = chain.txids.iter().map(|t| graph.tx_index(t)).collect();
    let Some(idx) = idx else { return false };
    if idx.len() < params.min_length {
        return false;
    }
    idx.iter().enumerate().all(|(k, &t)| {
        let Some(c) = peel_step(graph, t, ppb) else {
            return false;
        };
        match idx.get(k + 1) {
            Some(&n) => graph.spender(t, c) == Some(n),
            None => true,
        }
    })
}

pub fn verify_mixing(graph: &TxGraph<'_>, seq: &MixingSequence, params: &MixingParams) -> bool {
    let idx: Option<BTreeSet<u32>> = seq.txids.iter().map(|t| graph.tx_index(t)).collect();
    let Some(idx) = idx else { return false };
    if idx.len() < params.min_rounds {
        return false;
    }
    let qualifying = idx
        .iter()
        .all(|&t| largest_equal_group(graph, t as usize) >= params.min_equal_outputs);
    // every round after the first links to an earlier member
    let linked = idx.iter().skip(1).all(|&t| {
        graph.txs()[t as usize]
            .inputs
            .iter()
            .any(|op| graph.source(op).is_some_and(|s| idx.contains(&s)))
            || idx.iter().any(|&u| {
                graph.txs()[u as usize]
                    .inputs
                    .iter()
                    .any(|op| graph.source(op) == Some(t))
            })
    });
    qualifying && linked
}

/// Anything a detector reports, reduced to its transactions.
pub trait Detection {
    fn txids(&self) -> Vec<Txid>;
}

impl Detection for RansomCandidate {
    fn txids(&self) -> Vec<Txid> {
        vec![self.t1, self.t2]
    }
}

impl Detection for PeelingChain {
    fn txids(&self) -> Vec<Txid> {
        self.txids.clone()
    }
}

impl Detection for MixingSequence {
    fn txids(&self) -> Vec<Txid> {
        self.txids.clone()
    }
}

impl Detection for Vec<Txid> {
    fn txids(&self) -> Vec<Txid> {
        self.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateOutcome {
    pub index: usize,
    /// Patterns whose every core transaction this detection contains.
    pub matched_patterns: Vec<String>,
    pub true_positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub kind: PatternKind,
    pub labeled: usize,
    pub detected: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// 1.0 when nothing was detected.
    pub precision: f64,
    /// 1.0 when nothing of this kind was labeled.
    pub recall: f64,
    pub candidates: Vec<CandidateOutcome>,
    pub missed_patterns: Vec<String>,
}

/// Scores detections against the labeled patterns of `kind`. A pattern is
/// recalled when some detection contains all of its core txids; a detection
/// is a true positive when it recalls at least one pattern.
pub fn evaluate<D: Detection>(detections: &[D], labels: &GroundTruthLabels, kind: PatternKind) -> DetectionReport {
    let patterns: Vec<(&String, BTreeSet<Txid>)> = labels
        .of_kind(kind)
        .map(|(id, p)| (id, p.txids.iter().copied().collect()))
        .collect();
    let mut recalled: BTreeSet<&String> = BTreeSet::new();
    let candidates: Vec<CandidateOutcome> = detections
        .iter()
        .enumerate()
        .map(|(index, d)| {
            let got: BTreeSet<Txid> = d.txids().into_iter().collect();
            let matched: Vec<String> = patterns
                .iter()
                .filter(|(_, core)| !core.is_empty() && core.is_subset(&got))
                .map(|(id, _)| (*id).clone())
                .collect();
            for m in &matched {
                recalled.insert(patterns.iter().find(|(id, _)| *id == m).expect("listed").0);
            }
            CandidateOutcome {
                index,
                true_positive: !matched.is_empty(),
                matched_patterns: matched,
            }
        })
        .collect();
    let tp = candidates.iter().filter(|c| c.true_positive).count();
    let fp = candidates.len() - tp;
    let missed: Vec<String> = patterns
        .iter()
        .filter(|(id, _)| !recalled.contains(id))
        .map(|(id, _)| (*id).clone())
        .collect();
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    DetectionReport {
        kind,
        labeled: patterns.len(),
        detected: candidates.len(),
        true_positives: tp,
        false_positives: fp,
        false_negatives: missed.len(),
        precision: ratio(tp, candidates.len()),
        recall: ratio(recalled.len(), patterns.len()),
        candidates,
        missed_patterns: missed,
    }
}

pub fn write_ransom_csv<W: Write>(cands: &[RansomCandidate], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t1",
        "t2",
        "a0",
        "t1_inputs",
        "t1_outputs",
        "t2_outputs",
        "gap_seconds",
        "amount_sat",
        "change_present",
    ])?;
    for c in cands {
        let f = &c.features;
        w.write_record([
            c.t1.to_hex(),
            c.t2.to_hex(),
            c.a0.clone(),
            f.t1_inputs.to_string(),
            f.t1_outputs.to_string(),
            f.t2_outputs.to_string(),
            f.gap_seconds.to_string(),
            f.amount.to_sat().to_string(),
            f.change_present.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `index,length,txids` for chains or sequences; txids joined by `;`.
pub fn write_sequences_csv<W: Write, D: Detection>(items: &[D], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "length", "txids"])?;
    for (i, d) in items.iter().enumerate() {
        let t = d.txids();
        let joined: Vec<String> = t.iter().map(Txid::to_hex).collect();
        w.write_record([i.to_string(), t.len().to_string(), joined.join(";")])?;
    }
    w.flush()?;
    Ok(())
}
