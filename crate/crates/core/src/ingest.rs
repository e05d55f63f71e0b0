//! Line-delimited JSON ledgers, darknet listing CSVs and black-address lists.
//!
//! Ledger records are one JSON object per line:
//!
//! ```text
//! {"txid":"<hex64>","time":<int>,"inputs":[{"txid":"<hex64>","vout":<int>}],"outputs":[{"addr":"<string>","value":<int satoshis>}]}
//! ```
//!
//! An empty `inputs` array marks a coinbase. [`write_ledger`] emits exactly
//! this layout, so `write(parse(write(x)))` is byte-identical to `write(x)`.

use std::collections::{BTreeSet, HashMap};
use std::io::{self, BufRead, Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_ledger, Amount, AmountParseError, Ledger, OutPoint, Transaction, TxOutput, Txid,
    ValidationError, Window,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: negative amount {value}")]
    NegativeAmount { line: usize, value: i128 },
    #[error("line {line}: {source}")]
    Precision {
        line: usize,
        source: AmountParseError,
    },
    #[error("line {line}: listing price must be positive")]
    NonPositivePrice { line: usize },
    #[error("address list contains no addresses")]
    EmptySet,
    #[error("{} ledger violation(s), first at line {}: {}", .0.len(), .0[0].line, .0[0].error)]
    Validation(Vec<LocatedViolation>),
}

/// A ledger violation with the 1-based line of the offending record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LocatedViolation {
    pub line: usize,
    pub error: ValidationError,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    txid: Txid,
    time: i64,
    inputs: Vec<OutPoint>,
    outputs: Vec<OutputIn>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputIn {
    addr: String,
    value: i128,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    txid: Txid,
    time: i64,
    inputs: &'a [OutPoint],
    outputs: Vec<OutputOut<'a>>,
}

#[derive(Serialize)]
struct OutputOut<'a> {
    addr: &'a str,
    value: u64,
}

/// Parses a ledger whose window is derived from its own timestamps,
/// `[min time, max time + 1)`.
pub fn parse_ledger<R: BufRead>(reader: R) -> Result<Ledger, IngestError> {
    parse_ledger_in(reader, None)
}

/// Parses a ledger and validates it against an explicit window.
pub fn parse_ledger_with_window<R: BufRead>(
    reader: R,
    window: Window,
) -> Result<Ledger, IngestError> {
    parse_ledger_in(reader, Some(window))
}

fn parse_ledger_in<R: BufRead>(reader: R, window: Option<Window>) -> Result<Ledger, IngestError> {
    let mut txs = Vec::new();
    let mut line_of: HashMap<Txid, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let rec: RecordIn = serde_json::from_str(text).map_err(|e| IngestError::Syntax {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut outputs = Vec::with_capacity(rec.outputs.len());
        for o in rec.outputs {
            if o.value < 0 {
                return Err(IngestError::NegativeAmount {
                    line: line_no,
                    value: o.value,
                });
            }
            let sat = u64::try_from(o.value).map_err(|_| IngestError::Syntax {
                line: line_no,
                message: format!("value {} exceeds 64 bits", o.value),
            })?;
            outputs.push(TxOutput::new(o.addr, Amount::from_sat(sat)));
        }
        // first occurrence wins; a duplicate is reported by validation
        line_of.entry(rec.txid).or_insert(line_no);
        txs.push(Transaction {
            txid: rec.txid,
            time: rec.time,
            inputs: rec.inputs,
            outputs,
        });
    }
    let window = window.unwrap_or_else(|| derived_window(&txs));
    validate_ledger(txs, window).map_err(|errs| {
        IngestError::Validation(
            errs.0
                .into_iter()
                .map(|error| LocatedViolation {
                    line: line_of.get(&error.txid()).copied().unwrap_or(0),
                    error,
                })
                .collect(),
        )
    })
}

fn derived_window(txs: &[Transaction]) -> Window {
    let lo = txs.iter().map(|t| t.time).min();
    let hi = txs.iter().map(|t| t.time).max();
    match (lo, hi) {
        (Some(lo), Some(hi)) => Window::new(lo, hi.saturating_add(1)),
        _ => Window::new(0, 0),
    }
}

/// Writes the canonical line-delimited form in `(time, txid)` order.
pub fn write_ledger<W: Write>(ledger: &Ledger, mut out: W) -> io::Result<()> {
    for tx in ledger.transactions() {
        let rec = RecordOut {
            txid: tx.txid,
            time: tx.time,
            inputs: &tx.inputs,
            outputs: tx
                .outputs
                .iter()
                .map(|o| OutputOut {
                    addr: &o.address,
                    value: o.amount.to_sat(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn ledger_to_bytes(ledger: &Ledger) -> Vec<u8> {
    let mut buf = Vec::new();
    write_ledger(ledger, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

/// One daily darknet market listing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Listing {
    pub day: NaiveDate,
    pub market: String,
    pub vendor: String,
    pub item_id: String,
    pub price: Amount,
}

#[derive(Deserialize)]
struct ListingRow {
    day: String,
    market: String,
    vendor: String,
    item_id: String,
    price_btc: String,
}

pub const LISTINGS_HEADER: [&str; 5] = ["day", "market", "vendor", "item_id", "price_btc"];

/// Parses `day,market,vendor,item_id,price_btc` rows; prices convert
/// exactly to satoshis.
pub fn parse_listings<R: Read>(reader: R) -> Result<Vec<Listing>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_syntax(1, e))?.clone();
    if headers.iter().map(str::trim).ne(LISTINGS_HEADER) {
        return Err(IngestError::Syntax {
            line: 1,
            message: format!("expected header {}", LISTINGS_HEADER.join(",")),
        });
    }
    let mut listings = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            csv_syntax(line, e)
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let row: ListingRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| csv_syntax(line, e))?;
        let day = NaiveDate::parse_from_str(row.day.trim(), "%Y-%m-%d").map_err(|e| {
            IngestError::Syntax {
                line,
                message: format!("bad day {:?}: {e}", row.day),
            }
        })?;
        let price = Amount::from_btc_str(&row.price_btc).map_err(|source| match source {
            AmountParseError::Precision(_) => IngestError::Precision { line, source },
            other => IngestError::Syntax {
                line,
                message: other.to_string(),
            },
        })?;
        if price == Amount::ZERO {
            return Err(IngestError::NonPositivePrice { line });
        }
        listings.push(Listing {
            day,
            market: row.market,
            vendor: row.vendor,
            item_id: row.item_id,
            price,
        });
    }
    Ok(listings)
}

fn csv_syntax(line: usize, e: csv::Error) -> IngestError {
    IngestError::Syntax {
        line,
        message: e.to_string(),
    }
}

pub fn write_listings<W: Write>(listings: &[Listing], out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LISTINGS_HEADER).map_err(|e| csv_syntax(0, e))?;
    for l in listings {
        w.write_record([
            l.day.format("%Y-%m-%d").to_string(),
            l.market.clone(),
            l.vendor.clone(),
            l.item_id.clone(),
            l.price.to_string(),
        ])
        .map_err(|e| csv_syntax(0, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Known illicit addresses, e.g. one ransomware family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlackAddressSet {
    pub label: String,
    pub addresses: BTreeSet<String>,
}

impl BlackAddressSet {
    pub fn new<I, S>(label: impl Into<String>, addresses: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let addresses: BTreeSet<String> = addresses.into_iter().map(Into::into).collect();
        if addresses.is_empty() {
            return Err(IngestError::EmptySet);
        }
        Ok(BlackAddressSet {
            label: label.into(),
            addresses,
        })
    }

    pub fn contains(&self, addr: &str) -> bool {
        self.addresses.contains(addr)
    }

    pub fn len(&self) -> usize {
        self.addresses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addresses.is_empty()
    }
}

/// One address per line; blank lines and `#` comments are skipped.
pub fn parse_addresses<R: BufRead>(reader: R, label: &str) -> Result<BlackAddressSet, IngestError> {
    let mut addrs = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let a = line.trim();
        if a.is_empty() || a.starts_with('#') {
            continue;
        }
        addrs.push(a.to_owned());
    }
    BlackAddressSet::new(label, addrs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_util::*;

    const CB: &str = r#"{"txid":"0000000000000000000000000000000000000000000000000000000000000001","time":100,"inputs":[],"outputs":[{"addr":"a","value":5000}]}"#;

    #[test]
    fn coinbase_line() {
        let ledger = parse_ledger(CB.as_bytes()).unwrap();
        assert_eq!(ledger.len(), 1);
        assert_eq!(ledger.window(), Window::new(100, 101));
        assert_eq!(ledger_to_bytes(&ledger), format!("{CB}\n").into_bytes());
    }

    #[test]
    fn negative_value_reports_line() {
        let bad = CB.replace("5000", "-5");
        let input = format!("\n{bad}\n");
        match parse_ledger(input.as_bytes()) {
            Err(IngestError::NegativeAmount { line: 2, value: -5 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_line() {
        let input = format!("{CB}\n{{\"txid\":\"zz\"}}\n");
        assert!(matches!(
            parse_ledger(input.as_bytes()),
            Err(IngestError::Syntax { line: 2, .. })
        ));
        let short = CB.replace("0001\"", "01\"");
        assert!(matches!(
            parse_ledger(short.as_bytes()),
            Err(IngestError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn validation_errors_carry_lines() {
        let spend = |id: &str| {
            format!(
                r#"{{"txid":"{id}","time":200,"inputs":[{{"txid":"0000000000000000000000000000000000000000000000000000000000000001","vout":0}}],"outputs":[{{"addr":"b","value":10}}]}}"#
            )
        };
        let a = "00000000000000000000000000000000000000000000000000000000000000aa";
        let b = "00000000000000000000000000000000000000000000000000000000000000bb";
        let input = format!("{CB}\n{}\n{}\n", spend(a), spend(b));
        match parse_ledger(input.as_bytes()) {
            Err(IngestError::Validation(v)) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].line, 3);
                assert!(matches!(v[0].error, ValidationError::DoubleSpend { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn writer_orders_canonically() {
        let l = validate_ledger(
            vec![
                tx(2, 20, vec![op(1, 0)], &[("b\"q", 900)]),
                tx(1, 10, vec![], &[("a", 1000)]),
            ],
            Window::new(0, 100),
        )
        .unwrap();
        let bytes = ledger_to_bytes(&l);
        let back = parse_ledger_with_window(&bytes[..], Window::new(0, 100)).unwrap();
        assert_eq!(back, l);
        assert_eq!(ledger_to_bytes(&back), bytes);
    }

    #[test]
    fn listings() {
        let csv = "day,market,vendor,item_id,price_btc\n2015-03-01,agora,v1,i1,0.067459\n2015-03-01,agora,v2,i2,1\n";
        let l = parse_listings(csv.as_bytes()).unwrap();
        assert_eq!(l[0].price.to_sat(), 6_745_900);
        assert_eq!(l[1].price.to_sat(), 100_000_000);
        assert_eq!(l[0].day, NaiveDate::from_ymd_opt(2015, 3, 1).unwrap());

        let mut out = Vec::new();
        write_listings(&l, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), csv);
    }

    #[test]
    fn listing_errors() {
        let prec = "day,market,vendor,item_id,price_btc\n2015-03-01,m,v,i,0.000000001\n";
        assert!(matches!(
            parse_listings(prec.as_bytes()),
            Err(IngestError::Precision { line: 2, .. })
        ));
        let zero = "day,market,vendor,item_id,price_btc\n2015-03-01,m,v,i,0\n";
        assert!(matches!(
            parse_listings(zero.as_bytes()),
            Err(IngestError::NonPositivePrice { line: 2 })
        ));
        let day = "day,market,vendor,item_id,price_btc\n03/01/2015,m,v,i,1\n";
        assert!(matches!(
            parse_listings(day.as_bytes()),
            Err(IngestError::Syntax { line: 2, .. })
        ));
        let header = "date,market,vendor,item_id,price\n";
        assert!(matches!(
            parse_listings(header.as_bytes()),
            Err(IngestError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn addresses() {
        let set = parse_addresses("a1\nb2\na1\n".as_bytes(), "fam").unwrap();
        assert_eq!(set.len(), 2);
        assert!(matches!(
            parse_addresses("# only\n#comments\n\n".as_bytes(), "fam"),
            Err(IngestError::EmptySet)
        ));
        let crlf = parse_addresses("a1\r\nb2\r\na1\r\n".as_bytes(), "fam").unwrap();
        assert_eq!(crlf, set);
    }
}
