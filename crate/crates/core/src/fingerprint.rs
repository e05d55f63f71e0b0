//! Price fingerprinting: match listing prices to outputs created on the
//! listing's UTC day.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{DateTime, NaiveDate};
use serde::{Serialize, Serializer};

use crate::ingest::Listing;
use crate::model::{Amount, Ledger, Txid, Window};
use crate::par;
use crate::synthgen::day_start;

const DAY: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    /// One matching output, in a transaction with at most two outputs.
    UniquePayment,
    /// One matching output, in a transaction with more than two outputs.
    UniqueTransaction,
    MultiplePayment,
    MultipleTransaction,
    /// Several matches spread over both shape classes. The record's
    /// `payment_matches`/`transaction_matches` give the split.
    MultipleMixed,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::UniquePayment,
        Category::UniqueTransaction,
        Category::MultiplePayment,
        Category::MultipleTransaction,
        Category::MultipleMixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::UniquePayment => "unique-payment",
            Category::UniqueTransaction => "unique-transaction",
            Category::MultiplePayment => "multiple-payment",
            Category::MultipleTransaction => "multiple-transaction",
            Category::MultipleMixed => "multiple-mixed",
        }
    }

    fn classify(payment: usize, transaction: usize) -> Option<Category> {
        Some(match (payment, transaction) {
            (0, 0) => return None,
            (1, 0) => Category::UniquePayment,
            (0, 1) => Category::UniqueTransaction,
            (_, 0) => Category::MultiplePayment,
            (0, _) => Category::MultipleTransaction,
            _ => Category::MultipleMixed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OutputMatch {
    pub txid: Txid,
    pub vout: u32,
    pub amount: Amount,
    /// Output count of the matching transaction.
    pub tx_outputs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchRecord {
    /// Position of the listing in the input list.
    pub listing_index: usize,
    #[serde(serialize_with = "ser_listing")]
    pub listing: Listing,
    /// Sorted by `(txid, vout)`.
    pub matches: Vec<OutputMatch>,
    pub payment_matches: usize,
    pub transaction_matches: usize,
    /// `None` when nothing matched.
    pub category: Option<Category>,
}

impl MatchRecord {
    pub fn match_count(&self) -> usize {
        self.matches.len()
    }
}

fn ser_listing<S: Serializer>(l: &Listing, s: S) -> Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct View<'a> {
        day: String,
        market: &'a str,
        vendor: &'a str,
        item_id: &'a str,
        price: Amount,
    }
    View {
        day: l.day.format("%Y-%m-%d").to_string(),
        market: &l.market,
        vendor: &l.vendor,
        item_id: &l.item_id,
        price: l.price,
    }
    .serialize(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedListing {
    pub listing_index: usize,
    pub day: String,
    pub item_id: String,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FingerprintResult {
    pub tolerance: Amount,
    pub records: Vec<MatchRecord>,
    /// Listings whose day does not overlap the ledger window.
    pub skipped: Vec<SkippedListing>,
}

/// Outputs of one UTC day sorted by amount.
struct DayIndex {
    entries: Vec<(u64, usize, u32)>,
}

fn day_number(t: i64) -> i64 {
    t.div_euclid(DAY)
}

fn build_index(ledger: &Ledger) -> BTreeMap<i64, DayIndex> {
    let mut days: BTreeMap<i64, DayIndex> = BTreeMap::new();
    for (pos, tx) in ledger.transactions().iter().enumerate() {
        let d = days
            .entry(day_number(tx.time))
            .or_insert_with(|| DayIndex { entries: Vec::new() });
        for (v, o) in tx.outputs.iter().enumerate() {
            d.entries.push((o.amount.to_sat(), pos, v as u32));
        }
    }
    for d in days.values_mut() {
        d.entries.sort_unstable();
    }
    days
}

/// Matches each listing against outputs on its UTC day with amount in
/// `[price - tolerance, price + tolerance]`. Listings whose day does not
/// overlap the ledger window are reported in `skipped`.
pub fn match_listings(ledger: &Ledger, listings: &[Listing], tolerance: Amount) -> FingerprintResult {
    let index = build_index(ledger);
    let covered = ledger.window();
    let tol = tolerance.to_sat();
    let outcomes: Vec<Result<MatchRecord, SkippedListing>> = par::map_range(listings.len(), |i| {
        let l = &listings[i];
        let start = day_start(l.day);
        if Window::new(start, start + DAY).intersect(&covered).is_empty() {
            return Err(SkippedListing {
                listing_index: i,
                day: l.day.format("%Y-%m-%d").to_string(),
                item_id: l.item_id.clone(),
                reason: "day outside ledger",
            });
        }
        let price = l.price.to_sat();
        let (lo, hi) = (price.saturating_sub(tol), price.saturating_add(tol));
        let mut matches: Vec<OutputMatch> = index
            .get(&day_number(start))
            .map(|d| {
                let from = d.entries.partition_point(|e| e.0 < lo);
                d.entries[from..]
                    .iter()
                    .take_while(|e| e.0 <= hi)
                    .map(|&(amount, pos, vout)| {
                        let tx = &ledger.transactions()[pos];
                        OutputMatch {
                            txid: tx.txid,
                            vout,
                            amount: Amount::from_sat(amount),
                            tx_outputs: tx.outputs.len(),
                        }
                    })
                    .collect()
            })
            .unwrap_or_default();
        matches.sort_unstable_by_key(|m| (m.txid, m.vout));
        let payment = matches.iter().filter(|m| m.tx_outputs <= 2).count();
        let transaction = matches.len() - payment;
        Ok(MatchRecord {
            listing_index: i,
            listing: l.clone(),
            matches,
            payment_matches: payment,
            transaction_matches: transaction,
            category: Category::classify(payment, transaction),
        })
    });
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(s) => skipped.push(s),
        }
    }
    FingerprintResult {
        tolerance,
        records,
        skipped,
    }
}

/// Per-day listing counts in each category, indexed as [`Category::ALL`].
pub fn daily_match_series(records: &[MatchRecord]) -> BTreeMap<NaiveDate, [usize; 5]> {
    let mut series: BTreeMap<NaiveDate, [usize; 5]> = BTreeMap::new();
    for r in records {
        if let Some(c) = r.category {
            let k = Category::ALL.iter().position(|x| *x == c).expect("listed");
            series.entry(r.listing.day).or_default()[k] += 1;
        }
    }
    series
}

/// `day,item_id,category,match_count,txids`, with txids joined by `;`
/// (a transaction appears once even if several of its outputs match).
pub fn write_records_csv<W: Write>(records: &[MatchRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["day", "item_id", "category", "match_count", "txids"])?;
    for r in records {
        let mut txids: Vec<String> = r.matches.iter().map(|m| m.txid.to_hex()).collect();
        txids.dedup();
        w.write_record([
            r.listing.day.format("%Y-%m-%d").to_string(),
            r.listing.item_id.clone(),
            r.category.map_or("none", Category::as_str).to_owned(),
            r.match_count().to_string(),
            txids.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `day,unique-payment,unique-transaction,multiple-payment,multiple-transaction,multiple-mixed`
pub fn write_series_csv<W: Write>(series: &BTreeMap<NaiveDate, [usize; 5]>, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["day"];
    header.extend(Category::ALL.iter().map(|c| c.as_str()));
    w.write_record(&header)?;
    for (day, counts) in series {
        let mut row = vec![day.format("%Y-%m-%d").to_string()];
        row.extend(counts.iter().map(|c| c.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// UTC calendar day of a unix timestamp.
pub fn utc_day(t: i64) -> NaiveDate {
    DateTime::from_timestamp(day_number(t) * DAY, 0)
        .expect("in range")
        .date_naive()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_util::{tx, txid};
    use crate::model::validate_ledger;
    use crate::synthgen::{gen_background, GenParams, MixingSpec};

    const D0: i64 = 1_420_070_400; // 2015-01-01

    fn listing(day: &str, item: &str, sat: u64) -> Listing {
        Listing {
            day: day.parse().unwrap(),
            market: "agora".into(),
            vendor: "v".into(),
            item_id: item.into(),
            price: Amount::from_sat(sat),
        }
    }

    fn ledger() -> Ledger {
        let txs = vec![
            tx(1, D0 + 10, vec![], &[("a", 6_745_900), ("b", 1)]),
            tx(2, D0 + 20, vec![], &[("c", 6_745_901)]),
            tx(3, D0 + 30, vec![], &[("d", 500), ("e", 500), ("f", 500)]),
            tx(4, D0 + 40, vec![], &[("g", 500)]),
            tx(5, D0 + DAY + 5, vec![], &[("h", 6_745_900)]),
        ];
        validate_ledger(txs, Window::new(D0, D0 + 2 * DAY)).unwrap()
    }

    #[test]
    fn categories() {
        let l = ledger();
        let ls = vec![
            listing("2015-01-01", "exact", 6_745_900),
            listing("2015-01-01", "big", 500),
            listing("2015-01-01", "none", 42),
            listing("2015-01-02", "next", 6_745_900),
            listing("2015-03-01", "late", 6_745_900),
        ];
        let res = match_listings(&l, &ls, Amount::ZERO);
        let cats: Vec<Option<Category>> = res.records.iter().map(|r| r.category).collect();
        assert_eq!(
            cats,
            vec![
                Some(Category::UniquePayment),
                Some(Category::MultipleMixed),
                None,
                Some(Category::UniquePayment),
            ]
        );
        assert_eq!(res.records[1].payment_matches, 1);
        assert_eq!(res.records[1].transaction_matches, 3);
        assert_eq!(res.skipped.len(), 1);
        assert_eq!(res.skipped[0].listing_index, 4);
        assert_eq!(res.records[0].matches[0].txid, txid(1));
    }

    #[test]
    fn tolerance_widens() {
        let l = ledger();
        let ls = vec![listing("2015-01-01", "x", 6_745_900)];
        let exact = match_listings(&l, &ls, Amount::ZERO);
        let loose = match_listings(&l, &ls, Amount::from_sat(1));
        assert_eq!(exact.records[0].match_count(), 1);
        assert_eq!(loose.records[0].match_count(), 2);
        assert_eq!(loose.records[0].category, Some(Category::MultiplePayment));
        for m in &loose.records[0].matches {
            assert!(m.amount.abs_diff(Amount::from_sat(6_745_900)).to_sat() <= 1);
        }
    }

    #[test]
    fn series_partition() {
        let l = ledger();
        let ls = vec![
            listing("2015-01-01", "a", 6_745_900),
            listing("2015-01-01", "a2", 6_745_900),
            listing("2015-01-01", "none", 42),
            listing("2015-01-02", "b", 6_745_900),
        ];
        let res = match_listings(&l, &ls, Amount::ZERO);
        let s = daily_match_series(&res.records);
        let d1: NaiveDate = "2015-01-01".parse().unwrap();
        assert_eq!(s[&d1], [2, 0, 0, 0, 0]);
        let total: usize = s.values().flat_map(|c| c.iter()).sum();
        assert_eq!(total, res.records.iter().filter(|r| r.category.is_some()).count());
        assert!(daily_match_series(&[]).is_empty());
    }

    #[test]
    fn round_price_drowns_in_denomination_spike() {
        let window = Window::new(D0, D0 + 3 * DAY);
        let mut s = gen_background(&GenParams::new(4, 500, window)).unwrap();
        let id = s
            .inject_mixing_rounds(
                MixingSpec {
                    participants: 50,
                    rounds: 1,
                    denomination: Amount::from_sat(10_000_000),
                },
                8,
            )
            .unwrap()
            .unwrap();
        let round = s.labels().patterns[&id].txids[0];
        let (l, _) = s.into_parts().unwrap();
        let day = utc_day(l.get(&round).unwrap().time);
        let res = match_listings(
            &l,
            &[Listing {
                day,
                market: "m".into(),
                vendor: "v".into(),
                item_id: "tenth".into(),
                price: Amount::from_sat(10_000_000),
            }],
            Amount::ZERO,
        );
        assert!(res.records[0].match_count() >= 50);
        assert!(matches!(
            res.records[0].category,
            Some(Category::MultipleTransaction | Category::MultipleMixed)
        ));
    }

    #[test]
    fn csv_shape() {
        let l = ledger();
        let res = match_listings(&l, &[listing("2015-01-01", "big", 500)], Amount::ZERO);
        let mut buf = Vec::new();
        write_records_csv(&res.records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("day,item_id,category,match_count,txids"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("2015-01-01,big,multiple-mixed,4,"));
        assert_eq!(row.split(',').nth(4).unwrap().split(';').count(), 2);
    }

    #[test]
    fn utc_day_boundaries() {
        assert_eq!(utc_day(D0), "2015-01-01".parse::<NaiveDate>().unwrap());
        assert_eq!(utc_day(D0 - 1), "2014-12-31".parse::<NaiveDate>().unwrap());
        assert_eq!(day_start(utc_day(D0 + 500)), D0);
    }
}
