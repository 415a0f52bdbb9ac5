//! Exact-matching multi-party baseline after Lai et al.
//!
//! Each party ORs the filters of all its values into one party filter,
//! splits it into `P` segments and sends segment `j` to party `j`. Party
//! `j` ANDs the `j`-th segments of all parties and sends the conjunction to
//! every other party. Concatenating the conjunctions gives the final
//! filter, and a value matches when all of its 1-bits are set there.
//!
//! The matched unit is a whole record: its QID values joined by single
//! spaces and encoded as one string.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::bits::BitVec;
use crate::blocking::blocking_key;
use crate::bloom::{concat_segments, conjunct, split, BloomFilter, ClkEncoder, Segment};
use crate::error::{Error, Result};
use crate::protocol::bus::MessageBus;
use crate::protocol::message::{Message, SegmentBatch};
use crate::protocol::{par_map, ProtocolConfig, Pseudonym, RunId, SegmentShare};
use crate::record::Database;
use crate::report::RunReport;
use crate::securesum::OFFSET_RANGE;

/// What one party filter covers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LaiScope {
    /// One filter over the whole database.
    Database,
    /// One filter per block of the configured blocking attributes; values
    /// only match inside blocks held by every party.
    Blocks,
}

impl LaiScope {
    pub fn name(&self) -> &'static str {
        match self {
            LaiScope::Database => "database",
            LaiScope::Blocks => "blocks",
        }
    }
}

/// One party's view: the OR of its value filters per group, plus the value
/// filters themselves, kept locally for membership tests.
#[derive(Clone, Debug)]
pub struct PartyFilter {
    /// Group key (empty for the database scope) -> party filter.
    pub groups: BTreeMap<String, BloomFilter>,
    /// (rid, group key, value filter)
    pub values: Vec<(String, String, BloomFilter)>,
    pub skipped: usize,
}

/// The string encoded for a record.
pub fn record_value<S: AsRef<str>>(values: &[S]) -> String {
    values.iter().map(|v| v.as_ref().trim()).collect::<Vec<_>>().join(" ")
}

pub fn build_party_filter(db: &Database, config: &ProtocolConfig, scope: &LaiScope) -> Result<PartyFilter> {
    let qid_idx = db.attr_indices(&config.qid_attrs)?;
    let block_idx = db.attr_indices(&config.blocking_attrs)?;
    let enc = ClkEncoder::new(&config.params)?;
    let l = config.params.bit_len;
    let mut groups: BTreeMap<String, BitVec> = BTreeMap::new();
    let mut values = Vec::with_capacity(db.len());
    let mut skipped = 0;
    for r in db.records() {
        let value = record_value(&db.project(r, &qid_idx));
        let filter = match enc.encode(&[value]) {
            Ok(f) => f,
            Err(Error::Unencodable) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let key = match scope {
            LaiScope::Database => String::new(),
            LaiScope::Blocks => blocking_key(&db.project(r, &block_idx)),
        };
        groups.entry(key.clone()).or_insert_with(|| BitVec::zeros(l)).or_assign(filter.bits());
        values.push((r.rid.clone(), key, filter));
    }
    Ok(PartyFilter {
        groups: groups.into_iter().map(|(k, b)| (k, BloomFilter::from_bits(b))).collect(),
        values,
        skipped,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LaiOutcome {
    /// Matching record ids per party.
    pub matched: Vec<Vec<String>>,
    /// Final conjuncted filter per group, identical at every party.
    #[serde(skip)]
    pub finals: BTreeMap<String, BloomFilter>,
    pub report: RunReport,
}

fn share(key: &str, segment: Segment) -> SegmentShare {
    SegmentShare {
        pseudonym: Pseudonym([0; 16]),
        bkv: key.to_string(),
        segment,
    }
}

fn expect_segments(bus: &MessageBus, to: usize, index: usize, seg_len: usize) -> Result<Vec<(usize, Vec<SegmentShare>)>> {
    let mut out = Vec::new();
    for (from, msg) in bus.drain(to)? {
        let Message::Segments(batch) = msg else {
            return Err(Error::protocol("lai", "expected a segment batch"));
        };
        if batch.index as usize != index || batch.segment_len as usize != seg_len {
            return Err(Error::protocol("lai", format!("party {} got segment {}", to + 1, batch.index)));
        }
        out.push((from, batch.shares));
    }
    Ok(out)
}

/// Runs the baseline over one database per party.
pub fn lai_link(dbs: &[Database], config: &ProtocolConfig, scope: &LaiScope) -> Result<LaiOutcome> {
    config.validate()?;
    let p = config.params.parties;
    if dbs.len() != p {
        return Err(Error::Config(format!("{} databases for {} parties", dbs.len(), p)));
    }
    let seg_len = config.params.segment_len();
    let mut report = RunReport {
        mode: "lai".into(),
        parties: p,
        records_per_party: dbs.iter().map(Database::len).collect(),
        bit_len: config.params.bit_len,
        num_hashes: config.params.num_hashes,
        gram_len: config.params.gram_len,
        match_threshold: 1.0,
        offset_range: OFFSET_RANGE,
        ..Default::default()
    };
    report.notes.push(format!(
        "exact matching of whole records; one party filter per {}",
        if *scope == LaiScope::Database { "database" } else { "block" }
    ));

    let filters = report.step("prepare", || par_map(p, config.threaded, |i| build_party_filter(&dbs[i], config, scope)))?;
    report.skipped_records = filters.iter().map(|f| f.skipped).collect();

    let bus = MessageBus::new(RunId([0x1a; 16]), p);
    // party j ends up with the j-th segments of every party, per group
    let received = report.step("exchange", || {
        for (i, pf) in filters.iter().enumerate() {
            let mut per_target: Vec<Vec<SegmentShare>> = vec![Vec::new(); p];
            for (key, f) in &pf.groups {
                for seg in split(f, p)? {
                    per_target[seg.index - 1].push(share(key, seg));
                }
            }
            for (j, shares) in per_target.into_iter().enumerate().filter(|(j, _)| *j != i) {
                bus.send(i, j, &Message::Segments(SegmentBatch { index: (j + 1) as u32, segment_len: seg_len as u32, shares }))?;
            }
        }
        (0..p).map(|j| expect_segments(&bus, j, j + 1, seg_len)).collect::<Result<Vec<_>>>()
    })?;

    let common: Vec<String> = {
        let sets: Vec<BTreeSet<&String>> = filters.iter().map(|f| f.groups.keys().collect()).collect();
        sets[0].iter().filter(|k| sets[1..].iter().all(|s| s.contains(*k))).map(|k| (*k).clone()).collect()
    };
    report.common_blocks = common.len();

    // conjunction of the j-th segments, then all-to-all redistribution
    let finals = report.step("conjunct", || {
        let mut conj: Vec<BTreeMap<String, Segment>> = Vec::with_capacity(p);
        for (j, from) in received.iter().enumerate() {
            let mut by_key: HashMap<&str, Vec<Segment>> = HashMap::new();
            for (key, f) in &filters[j].groups {
                by_key.entry(key).or_default().push(split(f, p)?.swap_remove(j));
            }
            for (_, shares) in from {
                for s in shares {
                    by_key.entry(&s.bkv).or_default().push(s.segment.clone());
                }
            }
            let mut mine = BTreeMap::new();
            for key in &common {
                let segs = by_key.get(key.as_str()).map(Vec::as_slice).unwrap_or_default();
                if segs.len() != p {
                    return Err(Error::protocol("lai", format!("group {key:?} has {} of {p} segments", segs.len())));
                }
                mine.insert(key.clone(), conjunct(segs)?);
            }
            let shares: Vec<SegmentShare> = mine.iter().map(|(k, s)| share(k, s.clone())).collect();
            for t in (0..p).filter(|&t| t != j) {
                bus.send(j, t, &Message::Segments(SegmentBatch { index: (j + 1) as u32, segment_len: seg_len as u32, shares: shares.clone() }))?;
            }
            conj.push(mine);
        }
        let mut views: Vec<BTreeMap<String, BloomFilter>> = Vec::with_capacity(p);
        for t in 0..p {
            let mut parts: Vec<BTreeMap<String, Segment>> = vec![BTreeMap::new(); p];
            parts[t] = conj[t].clone();
            for (from, msg) in bus.drain(t)? {
                let Message::Segments(batch) = msg else {
                    return Err(Error::protocol("lai", "expected conjuncted segments"));
                };
                parts[from] = batch.shares.into_iter().map(|s| (s.bkv, s.segment)).collect();
            }
            let mut view = BTreeMap::new();
            for key in &common {
                let segs = parts
                    .iter()
                    .map(|m| m.get(key).cloned().ok_or_else(|| Error::protocol("lai", format!("missing segment for {key:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                view.insert(key.clone(), concat_segments(&segs));
            }
            views.push(view);
        }
        if views.iter().any(|v| v != &views[0]) {
            return Err(Error::protocol("lai", "parties assembled different final filters"));
        }
        Ok(views.swap_remove(0))
    })?;

    let matched = report.step("membership", || {
        Ok(filters
            .iter()
            .map(|pf| {
                pf.values
                    .iter()
                    .filter(|(_, key, f)| finals.get(key).is_some_and(|fin| f.bits().is_subset_of(fin.bits())))
                    .map(|(rid, _, _)| rid.clone())
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>())
    })?;

    let stats = bus.stats();
    report.messages = stats.messages;
    report.bytes = stats.bytes;
    report.bytes_by_kind = stats.by_kind.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    report.segment_payload_bytes = stats.segment_payload_bytes;
    report.segment_metadata_bytes = stats.segment_metadata_bytes;
    report.matches = matched.iter().map(Vec::len).sum();
    Ok(LaiOutcome { matched, finals, report })
}

/// Turns per-party matches into rid tuples for evaluation: matched records
/// holding the same value are grouped across parties, and a party without
/// that value contributes an empty rid. Needs the plaintext of every party,
/// so it is an evaluation aid, not part of the protocol.
pub fn predicted_tuples(dbs: &[Database], outcome: &LaiOutcome, qid_attrs: &[String]) -> Result<Vec<Vec<String>>> {
    let p = dbs.len();
    let mut by_value: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
    for (i, (db, matched)) in dbs.iter().zip(&outcome.matched).enumerate() {
        let idx = db.attr_indices(qid_attrs)?;
        let rows: HashMap<&str, &crate::record::Record> = db.records().iter().map(|r| (r.rid.as_str(), r)).collect();
        for rid in matched {
            let r = rows
                .get(rid.as_str())
                .ok_or_else(|| Error::Eval(format!("party {} has no record {rid}", i + 1)))?;
            let value = record_value(&db.project(r, &idx)).to_lowercase();
            by_value.entry(value).or_insert_with(|| vec![Vec::new(); p])[i].push(rid.clone());
        }
    }
    let mut out = Vec::new();
    for holders in by_value.into_values() {
        let mut tuples: Vec<Vec<String>> = vec![Vec::new()];
        for rids in holders {
            let options = if rids.is_empty() { vec![String::new()] } else { rids };
            tuples = tuples
                .into_iter()
                .flat_map(|t| {
                    options.iter().map(move |r| {
                        let mut t = t.clone();
                        t.push(r.clone());
                        t
                    })
                })
                .collect();
        }
        out.extend(tuples);
    }
    Ok(out)
}
