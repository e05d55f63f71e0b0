//! Windowed address/transaction graph and the queries built on it.
//!
//! Addresses are interned to dense `u32` ids. Adjacency is stored in CSR
//! form in both directions: per transaction the distinct input and output
//! addresses, per address the transactions producing and spending it. Rows
//! are sorted by transaction position, which is also time order.

use std::collections::{BTreeMap, HashMap};

use petgraph::unionfind::UnionFind;
use serde::Serialize;

use crate::ingest::BlackAddressSet;
use crate::model::{Ledger, OutPoint, Transaction, Window};
use crate::par;

const NONE: u32 = u32::MAX;

/// Compressed sparse rows.
#[derive(Debug, Clone, Default)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Csr {
    /// Builds from `(row, col)` pairs; rows come out sorted and deduplicated.
    fn from_pairs(n_rows: usize, pairs: &[(u32, u32)]) -> Csr {
        let mut counts = vec![0usize; n_rows + 1];
        for &(r, _) in pairs {
            counts[r as usize + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut targets = vec![0u32; pairs.len()];
        for &(r, c) in pairs {
            targets[fill[r as usize]] = c;
            fill[r as usize] += 1;
        }
        // sort + dedup each row, then compact
        let mut offsets = Vec::with_capacity(n_rows + 1);
        let mut out = Vec::with_capacity(targets.len());
        offsets.push(0);
        for r in 0..n_rows {
            let row = &mut targets[counts[r]..counts[r + 1]];
            row.sort_unstable();
            let start = out.len();
            for &c in row.iter() {
                if out.len() == start || out[out.len() - 1] != c {
                    out.push(c);
                }
            }
            offsets.push(out.len());
        }
        Csr {
            offsets,
            targets: out,
        }
    }

    fn row(&self, r: u32) -> &[u32] {
        &self.targets[self.offsets[r as usize]..self.offsets[r as usize + 1]]
    }
}

/// Transaction/address adjacency restricted to one observation window.
#[derive(Debug)]
pub struct TxGraph<'a> {
    ledger: &'a Ledger,
    window: Window,
    first: usize,
    txs: &'a [Transaction],
    addresses: Vec<&'a str>,
    addr_ids: HashMap<&'a str, u32>,
    tx_inputs: Csr,
    tx_outputs: Csr,
    producing: Csr,
    spending: Csr,
    out_offsets: Vec<usize>,
    out_spender: Vec<u32>,
}

/// Builds the graph of `ledger` restricted to `window ∩ ledger.window()`.
pub fn build_graph(ledger: &Ledger, window: Window) -> TxGraph<'_> {
    let window = window.intersect(&ledger.window());
    let txs = ledger.in_window(window);
    let first = txs
        .first()
        .and_then(|t| ledger.position(&t.txid))
        .unwrap_or(0);

    let mut addresses: Vec<&str> = Vec::new();
    let mut addr_ids: HashMap<&str, u32> = HashMap::new();

    let mut in_pairs: Vec<(u32, u32)> = Vec::new();
    let mut out_pairs: Vec<(u32, u32)> = Vec::new();
    let mut out_offsets = Vec::with_capacity(txs.len() + 1);
    out_offsets.push(0usize);
    for (t, tx) in txs.iter().enumerate() {
        let t = t as u32;
        for input in &tx.inputs {
            let src = ledger
                .resolve(input)
                .expect("validated ledger resolves every input");
            let id = *addr_ids.entry(src.address.as_str()).or_insert_with(|| {
                addresses.push(src.address.as_str());
                (addresses.len() - 1) as u32
            });
            in_pairs.push((t, id));
        }
        for out in &tx.outputs {
            let id = *addr_ids.entry(out.address.as_str()).or_insert_with(|| {
                addresses.push(out.address.as_str());
                (addresses.len() - 1) as u32
            });
            out_pairs.push((t, id));
        }
        out_offsets.push(out_offsets[out_offsets.len() - 1] + tx.outputs.len());
    }

    let n_tx = txs.len();
    let n_addr = addresses.len();
    let flip = |p: &[(u32, u32)]| p.iter().map(|&(t, a)| (a, t)).collect::<Vec<_>>();
    let producing = Csr::from_pairs(n_addr, &flip(&out_pairs));
    let spending = Csr::from_pairs(n_addr, &flip(&in_pairs));
    let tx_inputs = Csr::from_pairs(n_tx, &in_pairs);
    let tx_outputs = Csr::from_pairs(n_tx, &out_pairs);

    let mut out_spender = vec![NONE; out_offsets[n_tx]];
    for (t, tx) in txs.iter().enumerate() {
        for input in &tx.inputs {
            if let Some(src) = local_index(ledger, first, n_tx, &input.txid) {
                out_spender[out_offsets[src as usize] + input.vout as usize] = t as u32;
            }
        }
    }

    TxGraph {
        ledger,
        window,
        first,
        txs,
        addresses,
        addr_ids,
        tx_inputs,
        tx_outputs,
        producing,
        spending,
        out_offsets,
        out_spender,
    }
}

fn local_index(ledger: &Ledger, first: usize, n_tx: usize, txid: &crate::model::Txid) -> Option<u32> {
    let p = ledger.position(txid)?;
    (p >= first && p < first + n_tx).then(|| (p - first) as u32)
}

impl<'a> TxGraph<'a> {
    pub fn ledger(&self) -> &'a Ledger {
        self.ledger
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Window transactions in `(time, txid)` order; indices into this slice
    /// are the transaction ids used throughout the graph API.
    pub fn txs(&self) -> &'a [Transaction] {
        self.txs
    }

    pub fn tx_count(&self) -> usize {
        self.txs.len()
    }

    pub fn address_count(&self) -> usize {
        self.addresses.len()
    }

    pub fn address(&self, id: u32) -> &'a str {
        self.addresses[id as usize]
    }

    pub fn address_id(&self, addr: &str) -> Option<u32> {
        self.addr_ids.get(addr).copied()
    }

    pub fn addresses(&self) -> impl Iterator<Item = &'a str> + '_ {
        self.addresses.iter().copied()
    }

    /// Distinct addresses spent by window transaction `t`.
    pub fn input_addresses(&self, t: u32) -> &[u32] {
        self.tx_inputs.row(t)
    }

    /// Distinct addresses paid by window transaction `t`.
    pub fn output_addresses(&self, t: u32) -> &[u32] {
        self.tx_outputs.row(t)
    }

    pub fn producing_txs(&self, addr: u32) -> &[u32] {
        self.producing.row(addr)
    }

    pub fn spending_txs(&self, addr: u32) -> &[u32] {
        self.spending.row(addr)
    }

    /// Window index of the transaction spending output `vout` of `t`.
    pub fn spender(&self, t: u32, vout: usize) -> Option<u32> {
        let s = self.out_spender[self.out_offsets[t as usize] + vout];
        (s != NONE).then_some(s)
    }

    /// Window index of the transaction that created `outpoint`, if inside the window.
    pub fn source(&self, outpoint: &OutPoint) -> Option<u32> {
        local_index(self.ledger, self.first, self.txs.len(), &outpoint.txid)
    }

    pub fn tx_index(&self, txid: &crate::model::Txid) -> Option<u32> {
        local_index(self.ledger, self.first, self.txs.len(), txid)
    }

    /// Per-address taint distance by id, `None` when unreachable within `max_d`.
    ///
    /// Black addresses sit at distance 0. A transaction spending from an
    /// address at distance `d - 1` puts its output addresses at `d`; this is
    /// the shortest transaction path whose consecutive members share an
    /// address between outputs and the next inputs.
    pub fn taint_levels(&self, black: &BlackAddressSet, max_d: u32) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.addresses.len()];
        let mut tx_seen = vec![false; self.txs.len()];
        let mut frontier: Vec<u32> = black
            .addresses
            .iter()
            .filter_map(|a| self.address_id(a))
            .collect();
        frontier.sort_unstable();
        for &a in &frontier {
            dist[a as usize] = Some(0);
        }
        for d in 1..=max_d {
            if frontier.is_empty() {
                break;
            }
            let mut txs = par::flat_map_range(frontier.len(), |i| {
                self.spending.row(frontier[i]).to_vec()
            });
            txs.sort_unstable();
            txs.dedup();
            txs.retain(|&t| !std::mem::replace(&mut tx_seen[t as usize], true));
            let mut next = par::flat_map_range(txs.len(), |i| self.tx_outputs.row(txs[i]).to_vec());
            next.sort_unstable();
            next.dedup();
            next.retain(|&a| dist[a as usize].is_none());
            for &a in &next {
                dist[a as usize] = Some(d);
            }
            frontier = next;
        }
        dist
    }

    /// Addresses ever reached within `hops` undirected address-to-address
    /// hops from `seeds`; one hop crosses one transaction in either
    /// direction.
    pub fn neighborhood(&self, seeds: &[u32], hops: u32) -> Vec<bool> {
        let mut seen = vec![false; self.addresses.len()];
        let mut tx_seen = vec![false; self.txs.len()];
        let mut frontier: Vec<u32> = seeds.to_vec();
        frontier.sort_unstable();
        frontier.dedup();
        for &a in &frontier {
            seen[a as usize] = true;
        }
        for _ in 0..hops {
            if frontier.is_empty() {
                break;
            }
            let mut txs = par::flat_map_range(frontier.len(), |i| {
                let a = frontier[i];
                let mut v = self.producing.row(a).to_vec();
                v.extend_from_slice(self.spending.row(a));
                v
            });
            txs.sort_unstable();
            txs.dedup();
            txs.retain(|&t| !std::mem::replace(&mut tx_seen[t as usize], true));
            let mut next = par::flat_map_range(txs.len(), |i| {
                let t = txs[i];
                let mut v = self.tx_inputs.row(t).to_vec();
                v.extend_from_slice(self.tx_outputs.row(t));
                v
            });
            next.sort_unstable();
            next.dedup();
            next.retain(|&a| !std::mem::replace(&mut seen[a as usize], true));
            frontier = next;
        }
        seen
    }
}

/// Taint distance per address; addresses beyond `max_d` are omitted.
pub fn taint_distance(graph: &TxGraph<'_>, black: &BlackAddressSet, max_d: u32) -> BTreeMap<String, u32> {
    graph
        .taint_levels(black, max_d)
        .into_iter()
        .enumerate()
        .filter_map(|(id, d)| d.map(|d| (graph.address(id as u32).to_owned(), d)))
        .collect()
}

/// Number of distinct addresses at each distance `1..=max_d`.
/// The black set itself (distance 0) is not counted.
pub fn reach_counts(graph: &TxGraph<'_>, black: &BlackAddressSet, max_d: u32) -> BTreeMap<u32, usize> {
    let mut counts = BTreeMap::new();
    for d in graph.taint_levels(black, max_d).into_iter().flatten() {
        if d > 0 {
            *counts.entry(d).or_insert(0) += 1;
        }
    }
    counts
}

/// Fraction of window addresses within `hops` hops of `seeds`. Seeds outside
/// the window are ignored; an empty window yields 0.
pub fn neighborhood_fraction<S: AsRef<str>>(graph: &TxGraph<'_>, seeds: &[S], hops: u32) -> f64 {
    let n = graph.address_count();
    if n == 0 {
        return 0.0;
    }
    let ids: Vec<u32> = seeds
        .iter()
        .filter_map(|s| graph.address_id(s.as_ref()))
        .collect();
    let reached = graph.neighborhood(&ids, hops).iter().filter(|&&s| s).count();
    reached as f64 / n as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClusterOptions {
    /// Also merge a two-output transaction's change output into its input
    /// cluster when exactly one output is a first-seen address holding a
    /// non-round amount and the other output is round (a multiple of
    /// 0.001 BTC). Off by default: change detection misfires often.
    pub change_heuristic: bool,
}

const ROUND_UNIT: u64 = 100_000;

/// Address partition. Cluster numbers are canonical: clusters are ordered
/// by their lexicographically smallest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    cluster_of: Vec<u32>,
    n_clusters: usize,
}

impl Clustering {
    pub fn len(&self) -> usize {
        self.n_clusters
    }

    pub fn is_empty(&self) -> bool {
        self.n_clusters == 0
    }

    pub fn cluster_of(&self, addr_id: u32) -> u32 {
        self.cluster_of[addr_id as usize]
    }

    /// Clusters as sorted member lists, ordered by first member.
    pub fn partition<'g>(&self, graph: &TxGraph<'g>) -> Vec<Vec<&'g str>> {
        let mut parts: Vec<Vec<&str>> = vec![Vec::new(); self.n_clusters];
        for (id, &c) in self.cluster_of.iter().enumerate() {
            parts[c as usize].push(graph.address(id as u32));
        }
        for p in &mut parts {
            p.sort_unstable();
        }
        parts
    }

    pub fn same_cluster(&self, graph: &TxGraph<'_>, a: &str, b: &str) -> bool {
        match (graph.address_id(a), graph.address_id(b)) {
            (Some(x), Some(y)) => self.cluster_of(x) == self.cluster_of(y),
            _ => false,
        }
    }
}

/// Union-find closure of the co-spending relation: all input addresses of a
/// transaction belong to one owner.
pub fn cluster_multi_input(graph: &TxGraph<'_>, opts: ClusterOptions) -> Clustering {
    let n = graph.address_count();
    let mut uf = UnionFind::<u32>::new(n);
    for t in 0..graph.tx_count() as u32 {
        let ins = graph.input_addresses(t);
        if let Some((&first, rest)) = ins.split_first() {
            for &a in rest {
                uf.union(first, a);
            }
            if opts.change_heuristic {
                if let Some(change) = change_output(graph, t) {
                    uf.union(first, change);
                }
            }
        }
    }
    canonical(graph, &uf)
}

fn change_output(graph: &TxGraph<'_>, t: u32) -> Option<u32> {
    let tx = &graph.txs()[t as usize];
    if tx.outputs.len() != 2 {
        return None;
    }
    let fresh = |addr: u32| {
        graph.producing_txs(addr).first() == Some(&t)
            && graph.spending_txs(addr).first().is_none_or(|&s| s > t)
    };
    let round = |k: usize| tx.outputs[k].amount.to_sat().is_multiple_of(ROUND_UNIT);
    let id = |k: usize| graph.address_id(&tx.outputs[k].address).expect("interned");
    let candidates: Vec<usize> = (0..2)
        .filter(|&k| !round(k) && round(1 - k) && fresh(id(k)))
        .collect();
    match candidates.as_slice() {
        [k] if id(0) != id(1) => Some(id(*k)),
        _ => None,
    }
}

fn canonical(graph: &TxGraph<'_>, uf: &UnionFind<u32>) -> Clustering {
    let n = graph.address_count();
    let roots: Vec<u32> = (0..n as u32).map(|a| uf.find(a)).collect();
    let mut min_member: HashMap<u32, &str> = HashMap::new();
    for (a, &r) in roots.iter().enumerate() {
        let name = graph.address(a as u32);
        min_member
            .entry(r)
            .and_modify(|m| {
                if name < *m {
                    *m = name
                }
            })
            .or_insert(name);
    }
    let mut order: Vec<(&str, u32)> = min_member.into_iter().map(|(r, m)| (m, r)).collect();
    order.sort_unstable();
    let number: HashMap<u32, u32> = order
        .iter()
        .enumerate()
        .map(|(i, &(_, r))| (r, i as u32))
        .collect();
    Clustering {
        cluster_of: roots.iter().map(|r| number[r]).collect(),
        n_clusters: order.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_util::*;
    use crate::model::validate_ledger;

    fn ledger(txs: Vec<Transaction>) -> Ledger {
        validate_ledger(txs, Window::new(0, 10_000)).unwrap()
    }

    fn black(a: &[&str]) -> BlackAddressSet {
        BlackAddressSet::new("test", a.iter().copied()).unwrap()
    }

    #[test]
    fn two_tx_chain_is_one_hop() {
        let l = ledger(vec![
            tx(1, 10, vec![], &[("a", 1000)]),
            tx(2, 20, vec![op(1, 0)], &[("b", 900)]),
        ]);
        let g = build_graph(&l, l.window());
        let d = taint_distance(&g, &black(&["a"]), 5);
        assert_eq!(d.get("a"), Some(&0));
        assert_eq!(d.get("b"), Some(&1));
        assert_eq!(g.spender(0, 0), Some(1));
        assert_eq!(g.source(&op(1, 0)), Some(0));
    }

    #[test]
    fn empty_window_is_empty_graph() {
        let l = ledger(vec![tx(1, 10, vec![], &[("a", 1000)])]);
        let g = build_graph(&l, Window::new(500, 600));
        assert_eq!(g.tx_count(), 0);
        assert_eq!(g.address_count(), 0);
        assert_eq!(neighborhood_fraction(&g, &["a"], 2), 0.0);
        assert!(reach_counts(&g, &black(&["a"]), 3).is_empty());
    }

    fn star() -> Ledger {
        // three outputs to the black address, each spent once
        let mut txs = vec![tx(1, 10, vec![], &[("black", 1000), ("black", 1000), ("black", 1000)])];
        for k in 0..3u32 {
            let (x, y) = (format!("x{k}"), format!("y{k}"));
            txs.push(tx(
                10 + u64::from(k),
                20,
                vec![op(1, k)],
                &[(x.as_str(), 400), (y.as_str(), 500)],
            ));
        }
        ledger(txs)
    }

    #[test]
    fn star_reaches_six() {
        let l = star();
        let g = build_graph(&l, l.window());
        let b = black(&["black"]);
        let d = taint_distance(&g, &b, 3);
        assert_eq!(d.values().filter(|&&v| v == 1).count(), 6);
        assert_eq!(reach_counts(&g, &b, 3), BTreeMap::from([(1, 6)]));
        assert!(taint_distance(&g, &b, 0).len() == 1);
    }

    #[test]
    fn address_reuse_links_regardless_of_outpoint() {
        // t3 spends an output of "r" that t2 did not create; sharing "r" still links
        let l = ledger(vec![
            tx(1, 10, vec![], &[("r", 1000)]),
            tx(2, 20, vec![], &[("black", 1000)]),
            tx(3, 30, vec![op(2, 0)], &[("r", 900)]),
            tx(4, 40, vec![op(1, 0)], &[("z", 900)]),
        ]);
        let g = build_graph(&l, l.window());
        let d = taint_distance(&g, &black(&["black"]), 5);
        assert_eq!(d.get("r"), Some(&1));
        assert_eq!(d.get("z"), Some(&2));
    }

    #[test]
    fn co_spend_merges() {
        let l = ledger(vec![
            tx(1, 10, vec![], &[("a1", 1000), ("a2", 1000), ("a3", 5)]),
            tx(2, 20, vec![op(1, 0), op(1, 1)], &[("b", 1900)]),
        ]);
        let g = build_graph(&l, l.window());
        let c = cluster_multi_input(&g, ClusterOptions::default());
        assert!(c.same_cluster(&g, "a1", "a2"));
        assert!(!c.same_cluster(&g, "a1", "a3"));
        assert_eq!(c.partition(&g), vec![vec!["a1", "a2"], vec!["a3"], vec!["b"]]);
        // idempotent
        assert_eq!(cluster_multi_input(&g, ClusterOptions::default()), c);
    }

    #[test]
    fn change_heuristic_is_opt_in() {
        let l = ledger(vec![
            tx(1, 10, vec![], &[("a", 50_000_000)]),
            tx(2, 20, vec![op(1, 0)], &[("pay", 10_000_000), ("chg", 39_987_654)]),
        ]);
        let g = build_graph(&l, l.window());
        let off = cluster_multi_input(&g, ClusterOptions::default());
        assert!(!off.same_cluster(&g, "a", "chg"));
        let on = cluster_multi_input(&g, ClusterOptions { change_heuristic: true });
        assert!(on.same_cluster(&g, "a", "chg"));
        assert!(!on.same_cluster(&g, "a", "pay"));
    }

    #[test]
    fn neighborhood_hops() {
        let l = ledger(vec![
            tx(1, 10, vec![], &[("a", 1000)]),
            tx(2, 20, vec![op(1, 0)], &[("b", 900)]),
            tx(3, 30, vec![op(2, 0)], &[("c", 800)]),
            tx(4, 40, vec![], &[("far", 1)]),
        ]);
        let g = build_graph(&l, l.window());
        let all: Vec<&str> = g.addresses().collect();
        assert_eq!(neighborhood_fraction(&g, &all, 3), 1.0);
        assert_eq!(neighborhood_fraction(&g, &["a"], 0), 0.25);
        assert_eq!(neighborhood_fraction(&g, &["a", "nope"], 0), 0.25);
        assert_eq!(neighborhood_fraction(&g, &["a"], 1), 0.5);
        assert_eq!(neighborhood_fraction(&g, &["c"], 2), 0.75);
    }
}
