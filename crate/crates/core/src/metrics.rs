//! Anonymity-set sizes over an observation window: amount anonymity, first
//! order chainlet anonymity, the clamped chainlet occurrence matrix, the
//! denomination histogram and the payment audit built on top of them.

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;

use crate::model::{chainlet_of, Amount, Ledger, Transaction, Window};
use crate::par;

/// Number of window transactions with at least one output within
/// `tolerance` of `amount`. A transaction counts once however many of its
/// outputs match.
pub fn amount_anonymity(ledger: &Ledger, window: Window, amount: Amount, tolerance: Amount) -> usize {
    let txs = ledger.in_window(window);
    par::count(txs, |tx| {
        tx.outputs
            .iter()
            .any(|o| o.amount.abs_diff(amount) <= tolerance)
    })
}

/// Per-output variant of [`amount_anonymity`]: counts matching outputs,
/// not transactions.
pub fn amount_output_matches(ledger: &Ledger, window: Window, amount: Amount, tolerance: Amount) -> usize {
    let txs = ledger.in_window(window);
    par::fold_merge(
        txs,
        || 0usize,
        |acc, tx| {
            acc + tx
                .outputs
                .iter()
                .filter(|o| o.amount.abs_diff(amount) <= tolerance)
                .count()
        },
        |a, b| a + b,
    )
}

/// Number of window transactions with exactly `inputs` inputs and `outputs`
/// outputs (coinbase counts as one input).
pub fn chainlet_anonymity(ledger: &Ledger, window: Window, inputs: usize, outputs: usize) -> usize {
    par::count(ledger.in_window(window), |tx| tx.shape() == (inputs, outputs))
}

/// Clamped `clamp × clamp` occurrence matrix. Row `i`, column `o` (both
/// 1-based) counts transactions of clamped shape `(i, o)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainletMatrix {
    pub clamp: usize,
    pub total: u64,
    /// Row-major, `counts[(i - 1) * clamp + (o - 1)]`.
    counts: Vec<u64>,
    percentages: Vec<f64>,
    /// Set when the window held no transactions; percentages are all zero.
    pub empty: bool,
}

impl ChainletMatrix {
    pub fn count(&self, inputs: usize, outputs: usize) -> u64 {
        self.counts[self.cell(inputs, outputs)]
    }

    pub fn fraction(&self, inputs: usize, outputs: usize) -> f64 {
        self.percentages[self.cell(inputs, outputs)]
    }

    fn cell(&self, i: usize, o: usize) -> usize {
        assert!(
            (1..=self.clamp).contains(&i) && (1..=self.clamp).contains(&o),
            "cell ({i},{o}) outside {0}x{0} matrix",
            self.clamp
        );
        (i - 1) * self.clamp + (o - 1)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.percentages.chunks(self.clamp)
    }

    /// CSV with a header `inputs,o1,...,o<clamp>`; the last row and column
    /// hold every shape at or beyond the clamp.
    pub fn write_csv<W: Write>(&self, mut out: W, fractions: bool) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.clamp).map(|o| format!("o{o}")).collect();
        writeln!(out, "inputs,{}", header.join(","))?;
        for i in 1..=self.clamp {
            let cells: Vec<String> = (1..=self.clamp)
                .map(|o| {
                    if fractions {
                        format!("{:.10}", self.fraction(i, o))
                    } else {
                        self.count(i, o).to_string()
                    }
                })
                .collect();
            writeln!(out, "{i},{}", cells.join(","))?;
        }
        Ok(())
    }
}

pub fn chainlet_matrix(ledger: &Ledger, window: Window, clamp: usize) -> ChainletMatrix {
    assert!(clamp >= 1, "chainlet clamp must be at least 1");
    let txs = ledger.in_window(window);
    let counts = par::fold_merge(
        txs,
        || vec![0u64; clamp * clamp],
        |mut acc, tx| {
            let (i, o) = chainlet_of(tx, clamp);
            acc[(i - 1) * clamp + (o - 1)] += 1;
            acc
        },
        |mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        },
    );
    let total: u64 = counts.iter().sum();
    let percentages = if total == 0 {
        vec![0.0; clamp * clamp]
    } else {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    };
    ChainletMatrix {
        clamp,
        total,
        counts,
        percentages,
        empty: total == 0,
    }
}

/// Exact-amount output frequencies, most frequent first; ties by ascending
/// amount. Returns at most `top_k` entries.
pub fn denomination_histogram(ledger: &Ledger, window: Window, top_k: usize) -> Vec<(Amount, u64)> {
    let freq = par::fold_merge(
        ledger.in_window(window),
        HashMap::<Amount, u64>::new,
        |mut m, tx| {
            for o in &tx.outputs {
                *m.entry(o.amount).or_default() += 1;
            }
            m
        },
        merge_counts,
    );
    let mut v: Vec<(Amount, u64)> = freq.into_iter().collect();
    v.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v.truncate(top_k);
    v
}

fn merge_counts<K: std::hash::Hash + Eq>(mut a: HashMap<K, u64>, b: HashMap<K, u64>) -> HashMap<K, u64> {
    if a.len() < b.len() {
        return merge_counts(b, a);
    }
    for (k, v) in b {
        *a.entry(k).or_default() += v;
    }
    a
}

/// Amount anonymity of every distinct amount in the window.
fn per_amount_tx_counts(txs: &[Transaction]) -> HashMap<Amount, u64> {
    par::fold_merge(
        txs,
        HashMap::<Amount, u64>::new,
        |mut m, tx| {
            let mut seen: Vec<Amount> = tx.outputs.iter().map(|o| o.amount).collect();
            seen.sort_unstable();
            seen.dedup();
            for a in seen {
                *m.entry(a).or_default() += 1;
            }
            m
        },
        merge_counts,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum FrequencyThreshold {
    /// Lower median of the per-amount anonymity values in the window.
    #[default]
    Median,
    AtLeast(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub amount: Amount,
    pub shape: (usize, usize),
    /// Amount anonymity at zero tolerance.
    pub n: usize,
    /// Exact chainlet anonymity of `shape`.
    pub c: usize,
    /// Share of distinct window amounts whose anonymity is at most `n`.
    pub n_percentile: f64,
    /// Share of distinct window shapes whose anonymity is at most `c`.
    pub c_percentile: f64,
    pub rule8_threshold: u64,
    /// Frequent-denomination rule: `n` reaches the threshold.
    pub rule8_pass: bool,
    /// Small-shape rule: at most two inputs and two outputs.
    pub rule10_pass: bool,
}

/// Scores a prospective payment of `amount` in a transaction of `shape`
/// against the window's amount and chainlet distributions.
pub fn audit_payment(
    ledger: &Ledger,
    window: Window,
    amount: Amount,
    shape: (usize, usize),
    threshold: FrequencyThreshold,
) -> AuditReport {
    let txs = ledger.in_window(window);
    let n = amount_anonymity(ledger, window, amount, Amount::ZERO);
    let c = chainlet_anonymity(ledger, window, shape.0, shape.1);

    let mut amount_freqs: Vec<u64> = per_amount_tx_counts(txs).into_values().collect();
    amount_freqs.sort_unstable();
    let shape_freqs = par::fold_merge(
        txs,
        HashMap::<(usize, usize), u64>::new,
        |mut m, tx| {
            *m.entry(tx.shape()).or_default() += 1;
            m
        },
        merge_counts,
    );
    let mut shape_freqs: Vec<u64> = shape_freqs.into_values().collect();
    shape_freqs.sort_unstable();

    let rule8_threshold = match threshold {
        FrequencyThreshold::Median => lower_median(&amount_freqs).unwrap_or(1),
        FrequencyThreshold::AtLeast(k) => k,
    };
    AuditReport {
        amount,
        shape,
        n,
        c,
        n_percentile: percentile_rank(&amount_freqs, n as u64),
        c_percentile: percentile_rank(&shape_freqs, c as u64),
        rule8_threshold,
        rule8_pass: n as u64 >= rule8_threshold,
        rule10_pass: small_shape(shape),
    }
}

pub fn small_shape(shape: (usize, usize)) -> bool {
    shape.0 <= 2 && shape.1 <= 2
}

fn lower_median(sorted: &[u64]) -> Option<u64> {
    (!sorted.is_empty()).then(|| sorted[(sorted.len() - 1) / 2])
}

fn percentile_rank(sorted: &[u64], x: u64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_util::*;
    use crate::model::validate_ledger;

    const BTC: u64 = 100_000_000;

    fn three() -> Ledger {
        validate_ledger(
            vec![
                tx(1, 10, vec![], &[("a", 5 * BTC), ("b", 7)]),
                tx(2, 20, vec![op(1, 0)], &[("c", BTC), ("d", 3 * BTC)]),
                tx(3, 30, vec![op(1, 1), op(2, 0)], &[("e", 2)]),
            ],
            Window::new(0, 100),
        )
        .unwrap()
    }

    #[test]
    fn amount_exact_and_tolerance() {
        let l = three();
        let w = l.window();
        assert_eq!(amount_anonymity(&l, w, Amount::from_sat(BTC), Amount::ZERO), 1);
        assert_eq!(amount_anonymity(&l, w, Amount::from_sat(8), Amount::ZERO), 0);
        assert_eq!(amount_anonymity(&l, w, Amount::from_sat(8), Amount::from_sat(1)), 1);
        assert_eq!(amount_anonymity(&l, w, Amount::ZERO, Amount::MAX), 3);
        assert_eq!(amount_anonymity(&l, Window::new(15, 25), Amount::from_sat(BTC), Amount::ZERO), 1);
    }

    #[test]
    fn tx_counted_once() {
        let l = validate_ledger(
            vec![tx(1, 10, vec![], &[("a", 5), ("b", 5), ("c", 6)])],
            Window::new(0, 100),
        )
        .unwrap();
        let w = l.window();
        assert_eq!(amount_anonymity(&l, w, Amount::from_sat(5), Amount::ZERO), 1);
        assert_eq!(amount_output_matches(&l, w, Amount::from_sat(5), Amount::ZERO), 2);
    }

    #[test]
    fn chainlets() {
        let l = three();
        let w = l.window();
        assert_eq!(chainlet_anonymity(&l, w, 1, 2), 2);
        assert_eq!(chainlet_anonymity(&l, w, 2, 1), 1);
        assert_eq!(chainlet_anonymity(&l, w, 4, 4), 0);
        let m = chainlet_matrix(&l, w, 6);
        assert_eq!(m.count(1, 2), 2);
        assert!((m.fraction(1, 2) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.total, 3);
        assert!((m.rows().flatten().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn all_one_two_is_unit_cell() {
        let txs: Vec<_> = (0..100u64)
            .map(|i| tx(i, i as i64, vec![], &[("a", 1), ("b", 2)]))
            .collect();
        let l = validate_ledger(txs, Window::new(0, 1000)).unwrap();
        let m = chainlet_matrix(&l, l.window(), 6);
        assert_eq!(m.fraction(1, 2), 1.0);
    }

    #[test]
    fn empty_matrix_is_flagged() {
        let l = three();
        let m = chainlet_matrix(&l, Window::new(500, 600), 6);
        assert!(m.empty);
        assert_eq!(m.total, 0);
        assert!(m.rows().flatten().all(|&p| p == 0.0));
    }

    #[test]
    fn matrix_csv() {
        let l = three();
        let m = chainlet_matrix(&l, l.window(), 2);
        let mut out = Vec::new();
        m.write_csv(&mut out, false).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "inputs,o1,o2\n1,0,2\n2,1,0\n");
    }

    #[test]
    fn histogram_orders_by_frequency_then_amount() {
        let l = validate_ledger(
            vec![
                tx(1, 1, vec![], &[("a", BTC), ("b", BTC / 10)]),
                tx(2, 2, vec![], &[("a", BTC), ("b", BTC / 10)]),
                tx(3, 3, vec![], &[("a", BTC), ("z", 9)]),
            ],
            Window::new(0, 10),
        )
        .unwrap();
        let w = l.window();
        let h = denomination_histogram(&l, w, 2);
        assert_eq!(h, vec![(Amount::from_sat(BTC), 3), (Amount::from_sat(BTC / 10), 2)]);
        let all = denomination_histogram(&l, w, 50);
        assert_eq!(all.len(), 3);
        assert_eq!(all[2], (Amount::from_sat(9), 1));
    }

    #[test]
    fn audit_rules() {
        let l = three();
        let w = l.window();
        let r = audit_payment(&l, w, Amount::from_sat(BTC), (1, 2), FrequencyThreshold::Median);
        assert!(r.rule10_pass);
        assert_eq!(r.n, 1);
        assert_eq!(r.c, 2);
        assert!(r.rule8_pass);
        assert_eq!(r.c_percentile, 1.0);
        let r = audit_payment(&l, w, Amount::from_sat(BTC), (3, 1), FrequencyThreshold::AtLeast(2));
        assert!(!r.rule10_pass);
        assert!(!r.rule8_pass);
        assert_eq!(r.c, 0);
    }
}
