use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chaintrace::detectors::{
    detect_mixing, detect_peeling, detect_ransom, evaluate, write_ransom_csv, write_sequences_csv, Detection,
    DetectionReport, MixingParams, PeelingParams, RansomParams,
};
use chaintrace::fingerprint::{daily_match_series, match_listings, write_records_csv, write_series_csv, Category};
use chaintrace::graph::{cluster_multi_input, reach_counts, taint_distance, ClusterOptions};
use chaintrace::ingest::{
    ledger_to_bytes, parse_addresses, parse_ledger, parse_listings, write_listings, IngestError, Listing,
};
use chaintrace::metrics::{
    amount_anonymity, amount_output_matches, audit_payment, chainlet_anonymity, chainlet_matrix,
    denomination_histogram, FrequencyThreshold,
};
use chaintrace::synthgen::{
    gen_background, inject_scenario, read_labels, reference_distribution, write_labels, AmountModel, GenError,
    GenParams, GroundTruthLabels, PatternKind, ScenarioParams, ShapeProb,
};
use chaintrace::{build_graph, Ledger, Window};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{Command, DetectCommand, Format, GenerateArgs, LedgerArgs, MetricsCommand, TaintArgs};
use crate::manifest::FileDigest;

const DAY: i64 = 86_400;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, missing files, unusable configuration. Exit 2.
    Config(String),
    /// Input data failed parsing or validation. Exit 1.
    Data { message: String, detail: Value },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data { .. } => 1,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            CliError::Config(m) => json!({ "error": "config", "message": m }),
            CliError::Data { message, detail } => {
                json!({ "error": "validation", "message": message, "detail": detail })
            }
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError::Data {
            message: message.into(),
            detail: Value::Null,
        }
    }
}

fn ingest_error(path: &Path, e: IngestError) -> CliError {
    let message = format!("{}: {e}", path.display());
    match e {
        IngestError::Io(_) => CliError::Config(message),
        IngestError::Validation(v) => CliError::Data {
            message,
            detail: serde_json::to_value(v).unwrap_or(Value::Null),
        },
        _ => CliError::data(message),
    }
}

fn gen_error(e: GenError) -> CliError {
    match e {
        GenError::Ledger(v) => CliError::Data {
            message: v.to_string(),
            detail: serde_json::to_value(&v.0).unwrap_or(Value::Null),
        },
        other => CliError::Config(other.to_string()),
    }
}

/// In-memory result of one command; nothing touches disk until commit.
#[derive(Debug, Default)]
pub struct Run {
    pub inputs: Vec<FileDigest>,
    /// `(role, path, bytes)`; the main artifact goes to stdout when its path is `None`.
    pub outputs: Vec<(String, Option<PathBuf>, Vec<u8>)>,
    pub seed: Option<u64>,
    pub summary: Value,
}

impl Run {
    fn read(&mut self, role: &str, path: &Path) -> Result<Vec<u8>, CliError> {
        let data = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(FileDigest::of(role, Some(path), &data));
        Ok(data)
    }

    fn emit(&mut self, role: &str, path: Option<&Path>, data: Vec<u8>) {
        self.outputs.push((role.to_owned(), path.map(Path::to_path_buf), data));
    }

    fn ledger(&mut self, args: &LedgerArgs) -> Result<(Ledger, Window), CliError> {
        let data = self.read("ledger", &args.ledger)?;
        let ledger = parse_ledger(&data[..]).map_err(|e| ingest_error(&args.ledger, e))?;
        let window = window_for(&ledger, args)?;
        Ok((ledger, window))
    }

    fn labels(&mut self, path: &Path) -> Result<GroundTruthLabels, CliError> {
        let data = self.read("labels", path)?;
        read_labels(&data[..]).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }
}

fn window_for(ledger: &Ledger, args: &LedgerArgs) -> Result<Window, CliError> {
    let own = ledger.window();
    let start = args.from.map_or(own.start, |t| t.0);
    let end = args.to.map_or(own.end, |t| t.0);
    if (args.from.is_some() || args.to.is_some()) && start >= end {
        return Err(CliError::Config(format!("window [{start}, {end}) is empty")));
    }
    Ok(Window::new(start, end))
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), Box<dyn std::error::Error>>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

fn csv_rows(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

fn window_json(w: Window) -> Value {
    json!({ "start": w.start, "end": w.end })
}

pub fn execute(cmd: &Command, format: Option<Format>, out: Option<&Path>) -> Result<Run, CliError> {
    let mut run = Run::default();
    let fmt = |default: Format| format.unwrap_or(default);
    match cmd {
        Command::Validate { input, labels } => {
            let (ledger, window) = run.ledger(input)?;
            let entities = match labels {
                Some(p) => {
                    let l = run.labels(p)?;
                    l.check_against(&ledger).map_err(CliError::data)?;
                    l.entity_count()
                }
                None => None,
            };
            let stats = ledger.stats(entities);
            let body = match fmt(Format::Json) {
                Format::Json => to_json(&json!({
                    "valid": true,
                    "window": window_json(window),
                    "stats": stats,
                    "utxos": ledger.utxos().len(),
                })),
                Format::Csv => csv_rows(
                    &["transactions", "addresses", "entities", "utxos"],
                    [vec![
                        stats.n_tx.to_string(),
                        stats.n_addresses.to_string(),
                        stats.n_entities.map_or(String::new(), |n| n.to_string()),
                        ledger.utxos().len().to_string(),
                    ]],
                ),
            };
            run.summary = json!({ "transactions": stats.n_tx });
            run.emit("report", out, body);
        }
        Command::Generate(g) => generate(&mut run, g, format, out)?,
        Command::Taint(t) => {
            let (ledger, window, black) = taint_inputs(&mut run, t)?;
            let graph = build_graph(&ledger, window);
            let dist = taint_distance(&graph, &black, t.max_d);
            let body = match fmt(Format::Json) {
                Format::Json => to_json(&json!({
                    "black_label": black.label,
                    "max_d": t.max_d,
                    "window": window_json(graph.window()),
                    "distances": dist,
                })),
                Format::Csv => csv_rows(
                    &["address", "distance"],
                    dist.iter().map(|(a, d)| vec![a.clone(), d.to_string()]),
                ),
            };
            run.summary = json!({ "tainted_addresses": dist.len() });
            run.emit("distances", out, body);
        }
        Command::Reach(t) => {
            let (ledger, window, black) = taint_inputs(&mut run, t)?;
            let graph = build_graph(&ledger, window);
            let counts = reach_counts(&graph, &black, t.max_d);
            let body = match fmt(Format::Json) {
                Format::Json => to_json(&json!({
                    "black_label": black.label,
                    "black_addresses": black.len(),
                    "max_d": t.max_d,
                    "window": window_json(graph.window()),
                    "counts": counts,
                })),
                Format::Csv => csv_rows(
                    &["distance", "addresses"],
                    counts.iter().map(|(d, n)| vec![d.to_string(), n.to_string()]),
                ),
            };
            run.emit("reach", out, body);
        }
        Command::Cluster {
            input,
            change_heuristic,
        } => {
            let (ledger, window) = run.ledger(input)?;
            let graph = build_graph(&ledger, window);
            let clusters = cluster_multi_input(
                &graph,
                ClusterOptions {
                    change_heuristic: *change_heuristic,
                },
            );
            let parts = clusters.partition(&graph);
            let body = match fmt(Format::Json) {
                Format::Json => to_json(&json!({
                    "addresses": graph.address_count(),
                    "clusters": parts.len(),
                    "change_heuristic": change_heuristic,
                    "partition": parts,
                })),
                Format::Csv => csv_rows(
                    &["address", "cluster"],
                    parts
                        .iter()
                        .enumerate()
                        .flat_map(|(c, p)| p.iter().map(move |a| vec![(*a).to_owned(), c.to_string()])),
                ),
            };
            run.summary = json!({ "clusters": parts.len(), "addresses": graph.address_count() });
            run.emit("clusters", out, body);
        }
        Command::Metrics(m) => metrics(&mut run, m, format, out)?,
        Command::Fingerprint {
            input,
            listings,
            tolerance,
            series,
        } => {
            let (ledger, window) = run.ledger(input)?;
            let data = run.read("listings", listings)?;
            let all = parse_listings(&data[..]).map_err(|e| ingest_error(listings, e))?;
            let in_window: Vec<Listing> = all
                .into_iter()
                .filter(|l| {
                    let s = chaintrace::synthgen::day_start(l.day);
                    !Window::new(s, s + DAY).intersect(&window).is_empty()
                })
                .collect();
            let res = match_listings(&ledger, &in_window, *tolerance);
            let s = daily_match_series(&res.records);
            let body = match (fmt(Format::Json), series) {
                (Format::Json, false) => to_json(&res),
                (Format::Json, true) => {
                    let days: BTreeMap<String, BTreeMap<&str, usize>> = s
                        .iter()
                        .map(|(d, c)| {
                            (
                                d.format("%Y-%m-%d").to_string(),
                                Category::ALL.iter().map(|k| k.as_str()).zip(c.iter().copied()).collect(),
                            )
                        })
                        .collect();
                    to_json(&json!({ "tolerance": tolerance, "series": days }))
                }
                (Format::Csv, false) => csv_bytes(|b| Ok(write_records_csv(&res.records, b)?)),
                (Format::Csv, true) => csv_bytes(|b| Ok(write_series_csv(&s, b)?)),
            };
            let matched = res.records.iter().filter(|r| r.category.is_some()).count();
            run.summary = json!({
                "listings": res.records.len(),
                "matched": matched,
                "skipped": res.skipped.len(),
            });
            run.emit("fingerprint", out, body);
        }
        Command::Detect(d) => detect(&mut run, d, format, out)?,
        Command::Audit {
            input,
            amount,
            shape,
            threshold,
        } => {
            let (ledger, window) = run.ledger(input)?;
            let threshold = match threshold.as_str() {
                "median" => FrequencyThreshold::Median,
                n => FrequencyThreshold::AtLeast(
                    n.parse()
                        .map_err(|_| CliError::Config(format!("threshold must be a count or \"median\", got {n:?}")))?,
                ),
            };
            let r = audit_payment(&ledger, window, *amount, (shape.0, shape.1), threshold);
            let body = match fmt(Format::Json) {
                Format::Json => to_json(&r),
                Format::Csv => csv_rows(
                    &[
                        "amount_sat",
                        "inputs",
                        "outputs",
                        "n",
                        "c",
                        "n_percentile",
                        "c_percentile",
                        "rule8_threshold",
                        "rule8_pass",
                        "rule10_pass",
                    ],
                    [vec![
                        r.amount.to_sat().to_string(),
                        r.shape.0.to_string(),
                        r.shape.1.to_string(),
                        r.n.to_string(),
                        r.c.to_string(),
                        format!("{:.6}", r.n_percentile),
                        format!("{:.6}", r.c_percentile),
                        r.rule8_threshold.to_string(),
                        r.rule8_pass.to_string(),
                        r.rule10_pass.to_string(),
                    ]],
                ),
            };
            run.emit("audit", out, body);
        }
        Command::Replay => unreachable!("replay is handled by the caller"),
    }
    Ok(run)
}

fn taint_inputs(run: &mut Run, t: &TaintArgs) -> Result<(Ledger, Window, chaintrace::ingest::BlackAddressSet), CliError> {
    let (ledger, window) = run.ledger(&t.input)?;
    let data = run.read("black", &t.black)?;
    let label = t.black.file_stem().map_or("black".into(), |s| s.to_string_lossy().into_owned());
    let black = parse_addresses(&data[..], &label).map_err(|e| ingest_error(&t.black, e))?;
    Ok((ledger, window, black))
}

fn generate(run: &mut Run, g: &GenerateArgs, format: Option<Format>, out: Option<&Path>) -> Result<(), CliError> {
    if format == Some(Format::Csv) {
        return Err(CliError::Config("generate writes JSON Lines; --format csv is not supported".into()));
    }
    let start = g.from.0;
    let end = g.to.map_or(start + 30 * DAY, |t| t.0);
    if start >= end {
        return Err(CliError::Config(format!("window [{start}, {end}) is empty")));
    }
    let distribution: Vec<ShapeProb> = match &g.distribution {
        Some(p) => {
            let data = run.read("distribution", p)?;
            serde_json::from_slice(&data).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => reference_distribution(),
    };
    let params = GenParams {
        seed: g.seed,
        n_background_tx: g.n,
        chainlet_distribution: distribution,
        wallet_count: g.wallets,
        amount_model: AmountModel {
            round_weight: g.round_weight,
            specific_weight: g.specific_weight,
        },
        window: Window::new(start, end),
    };
    let listings = match &g.listings {
        Some(p) => {
            let data = run.read("listings", p)?;
            parse_listings(&data[..]).map_err(|e| ingest_error(p, e))?
        }
        None => Vec::new(),
    };
    let scenario = ScenarioParams {
        peel_length: g.peel_length,
        peel_fraction: g.peel_fraction,
        mix_participants: g.mix_participants,
        mix_rounds: g.mix_rounds,
        mix_denomination: g.mix_denomination,
        ransom_inputs: g.ransom_inputs,
        ransom_gap: g.ransom_gap,
        ransom_jitter: g.ransom_jitter,
        dust_amount: g.dust_amount,
        sale_shape: (g.sale_shape.0, g.sale_shape.1),
    };
    let mut synth = gen_background(&params).map_err(gen_error)?;
    let converted = synth.converted_shapes();
    let outcome = inject_scenario(&mut synth, &g.inject, &scenario, &listings, g.seed).map_err(gen_error)?;
    let (ledger, labels) = synth.into_parts().map_err(gen_error)?;

    let mut per_kind: BTreeMap<&str, usize> = BTreeMap::new();
    for p in labels.patterns.values() {
        *per_kind.entry(p.kind.as_str()).or_default() += 1;
    }
    run.seed = Some(g.seed);
    run.summary = json!({
        "transactions": ledger.len(),
        "background": g.n,
        "converted_shapes": converted,
        "patterns": per_kind,
    });
    run.emit("ledger", out, ledger_to_bytes(&ledger));
    if let Some(p) = &g.labels {
        let mut buf = Vec::new();
        write_labels(&labels, &mut buf).expect("memory write");
        run.emit("labels", Some(p), buf);
    }
    if let Some(p) = &g.listings_out {
        let used = if outcome.synthesized_listings.is_empty() {
            &listings
        } else {
            &outcome.synthesized_listings
        };
        let mut buf = Vec::new();
        write_listings(used, &mut buf).map_err(|e| CliError::Config(e.to_string()))?;
        run.emit("listings", Some(p), buf);
    }
    Ok(())
}

fn metrics(run: &mut Run, m: &MetricsCommand, format: Option<Format>, out: Option<&Path>) -> Result<(), CliError> {
    let fmt = |default: Format| format.unwrap_or(default);
    match m {
        MetricsCommand::Amount {
            input,
            amount,
            tolerance,
        } => {
            let (ledger, window) = run.ledger(input)?;
            let n = amount_anonymity(&ledger, window, *amount, *tolerance);
            let outputs = amount_output_matches(&ledger, window, *amount, *tolerance);
            let body = match fmt(Format::Json) {
                Format::Json => to_json(&json!({
                    "amount": amount,
                    "tolerance": tolerance,
                    "window": window_json(window),
                    "transactions": n,
                    "outputs": outputs,
                })),
                Format::Csv => csv_rows(
                    &["amount_sat", "tolerance_sat", "transactions", "outputs"],
                    [vec![amount.to_sat().to_string(), tolerance.to_sat().to_string(), n.to_string(), outputs.to_string()]],
                ),
            };
            run.emit("amount", out, body);
        }
        MetricsCommand::Chainlet { input, inputs, outputs } => {
            let (ledger, window) = run.ledger(input)?;
            let c = chainlet_anonymity(&ledger, window, *inputs, *outputs);
            let body = match fmt(Format::Json) {
                Format::Json => to_json(&json!({
                    "inputs": inputs,
                    "outputs": outputs,
                    "window": window_json(window),
                    "transactions": c,
                })),
                Format::Csv => csv_rows(
                    &["inputs", "outputs", "transactions"],
                    [vec![inputs.to_string(), outputs.to_string(), c.to_string()]],
                ),
            };
            run.emit("chainlet", out, body);
        }
        MetricsCommand::Matrix { input, clamp, counts } => {
            if *clamp == 0 {
                return Err(CliError::Config("clamp must be at least 1".into()));
            }
            let (ledger, window) = run.ledger(input)?;
            let m = chainlet_matrix(&ledger, window, *clamp);
            let body = match fmt(Format::Csv) {
                Format::Csv => {
                    let mut buf = Vec::new();
                    m.write_csv(&mut buf, !counts).expect("memory write");
                    buf
                }
                Format::Json => {
                    let cells: Vec<Vec<Value>> = (1..=*clamp)
                        .map(|i| {
                            (1..=*clamp)
                                .map(|o| if *counts { json!(m.count(i, o)) } else { json!(m.fraction(i, o)) })
                                .collect()
                        })
                        .collect();
                    to_json(&json!({
                        "clamp": clamp,
                        "total": m.total,
                        "empty": m.empty,
                        "window": window_json(window),
                        "cells": cells,
                    }))
                }
            };
            run.summary = json!({ "total": m.total, "one_to_two": m.fraction(1, 2.min(*clamp)) });
            run.emit("matrix", out, body);
        }
        MetricsCommand::Denoms { input, top } => {
            let (ledger, window) = run.ledger(input)?;
            let h = denomination_histogram(&ledger, window, *top);
            let body = match fmt(Format::Csv) {
                Format::Csv => csv_rows(
                    &["amount_btc", "amount_sat", "outputs"],
                    h.iter().map(|(a, n)| vec![a.to_string(), a.to_sat().to_string(), n.to_string()]),
                ),
                Format::Json => to_json(
                    &h.iter()
                        .map(|(a, n)| json!({ "amount": a, "outputs": n }))
                        .collect::<Vec<_>>(),
                ),
            };
            run.emit("denominations", out, body);
        }
    }
    Ok(())
}

fn report_summary(r: &DetectionReport) -> Value {
    json!({
        "labeled": r.labeled,
        "detected": r.detected,
        "true_positives": r.true_positives,
        "false_positives": r.false_positives,
        "false_negatives": r.false_negatives,
        "precision": r.precision,
        "recall": r.recall,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish_detect<D: Detection + Serialize>(
    run: &mut Run,
    kind: PatternKind,
    params: Value,
    found: &[D],
    labels: Option<GroundTruthLabels>,
    format: Format,
    out: Option<&Path>,
    csv: impl FnOnce(&[D], &mut Vec<u8>) -> Result<(), Box<dyn std::error::Error>>,
) {
    let report = labels.map(|l| evaluate(found, &l, kind));
    run.summary = match &report {
        Some(r) => report_summary(r),
        None => json!({ "detected": found.len() }),
    };
    let body = match format {
        Format::Json => to_json(&json!({
            "detector": kind.as_str(),
            "params": params,
            "candidates": found,
            "report": report,
        })),
        Format::Csv => csv_bytes(|b| csv(found, b)),
    };
    run.emit("candidates", out, body);
}

fn detect(run: &mut Run, d: &DetectCommand, format: Option<Format>, out: Option<&Path>) -> Result<(), CliError> {
    let fmt = format.unwrap_or(Format::Json);
    let (input, eval) = match d {
        DetectCommand::Ransom { input, eval, .. }
        | DetectCommand::Peeling { input, eval, .. }
        | DetectCommand::Mixing { input, eval, .. } => (input, eval),
    };
    let (ledger, window) = run.ledger(input)?;
    let labels = match (&eval.labels, eval.eval) {
        (Some(p), true) => Some(run.labels(p)?),
        _ => None,
    };
    let graph = build_graph(&ledger, window);
    match d {
        DetectCommand::Ransom {
            min_t1_inputs,
            max_t2_outputs,
            gap_center,
            gap_slack,
            min_amount,
            ..
        } => {
            let p = RansomParams {
                min_t1_inputs: *min_t1_inputs,
                max_t2_outputs: *max_t2_outputs,
                gap_center: *gap_center,
                gap_slack: *gap_slack,
                min_amount: *min_amount,
            };
            let found = detect_ransom(&graph, &p);
            finish_detect(run, PatternKind::Ransom, json!(p), &found, labels, fmt, out, |f, b| {
                Ok(write_ransom_csv(f, b)?)
            });
        }
        DetectCommand::Peeling {
            min_length,
            peel_fraction_max,
            ..
        } => {
            let p = PeelingParams {
                min_length: *min_length,
                peel_fraction_max: *peel_fraction_max,
            };
            let found = detect_peeling(&graph, &p);
            finish_detect(run, PatternKind::Peeling, json!(p), &found, labels, fmt, out, |f, b| {
                Ok(write_sequences_csv(f, b)?)
            });
        }
        DetectCommand::Mixing {
            min_equal_outputs,
            min_rounds,
            ..
        } => {
            let p = MixingParams {
                min_equal_outputs: *min_equal_outputs,
                min_rounds: *min_rounds,
            };
            let found = detect_mixing(&graph, &p);
            finish_detect(run, PatternKind::Mixing, json!(p), &found, labels, fmt, out, |f, b| {
                Ok(write_sequences_csv(f, b)?)
            });
        }
    }
    Ok(())
}
