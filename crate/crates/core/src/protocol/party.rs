//! Party-local state: encoding, blocking and pseudonymisation (Steps 2-3),
//! and the segment exchange (Step 4).

use std::collections::HashMap;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocking::blocking_key;
use crate::bloom::{split, BloomFilter, BloomParams, ClkEncoder};
use crate::error::{Error, Result};
use crate::record::Database;

use super::bus::MessageBus;
use super::message::{Message, SegmentBatch};
use super::{par_map, ProtocolConfig, Pseudonym, SegmentShare};

#[derive(Clone, Debug)]
pub struct PreparedRecord {
    pub pseudonym: Pseudonym,
    pub bkv: String,
    pub filter: BloomFilter,
}

/// Everything one party holds privately. Only segment shares derived from
/// it are ever sent.
#[derive(Clone, Debug)]
pub struct PartyState {
    index: usize,
    params: BloomParams,
    records: Vec<PreparedRecord>,
    by_pseudonym: HashMap<Pseudonym, usize>,
    rids: Vec<String>,
    skipped: usize,
    mean_grams: f64,
}

impl PartyState {
    /// Zero-based party position in the ring.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn params(&self) -> &BloomParams {
        &self.params
    }

    pub fn records(&self) -> &[PreparedRecord] {
        &self.records
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Average distinct q-grams per encoded record.
    pub fn mean_grams(&self) -> f64 {
        self.mean_grams
    }

    /// Full filter 1-bit count `x` of one of this party's records.
    pub fn ones_of(&self, p: &Pseudonym) -> Option<u32> {
        self.by_pseudonym.get(p).map(|&i| self.records[i].filter.ones())
    }

    pub fn filter_of(&self, p: &Pseudonym) -> Option<&BloomFilter> {
        self.by_pseudonym.get(p).map(|&i| &self.records[i].filter)
    }

    /// Local lookup of the real record id behind a pseudonym.
    pub fn true_rid(&self, p: &Pseudonym) -> Option<&str> {
        self.by_pseudonym.get(p).map(|&i| self.rids[i].as_str())
    }

    /// Builds a party directly from filters. Used for hand-made instances.
    pub fn from_filters(
        index: usize,
        params: &BloomParams,
        rows: Vec<(String, String, BloomFilter)>,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        let mut rng = party_rng(seed, index);
        let mut st = PartyState {
            index,
            params: params.clone(),
            records: Vec::with_capacity(rows.len()),
            by_pseudonym: HashMap::with_capacity(rows.len()),
            rids: Vec::with_capacity(rows.len()),
            skipped: 0,
            mean_grams: 0.0,
        };
        for (rid, bkv, filter) in rows {
            if filter.len() != params.bit_len {
                return Err(Error::LengthMismatch {
                    left: filter.len(),
                    right: params.bit_len,
                });
            }
            st.push(&mut rng, rid, bkv, filter);
        }
        Ok(st)
    }

    fn push(&mut self, rng: &mut ChaCha8Rng, rid: String, bkv: String, filter: BloomFilter) {
        let mut pseudonym = Pseudonym(rng.random());
        while self.by_pseudonym.contains_key(&pseudonym) {
            pseudonym = Pseudonym(rng.random());
        }
        self.by_pseudonym.insert(pseudonym, self.records.len());
        self.records.push(PreparedRecord {
            pseudonym,
            bkv,
            filter,
        });
        self.rids.push(rid);
    }
}

fn party_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Encodes, blocks and pseudonymises one party's database.
pub fn prepare_party(index: usize, db: &Database, config: &ProtocolConfig) -> Result<PartyState> {
    config.validate()?;
    if db.is_empty() {
        return Err(Error::protocol("prepare", format!("party {} has an empty database", index + 1)));
    }
    let qid_idx = db.attr_indices(&config.qid_attrs)?;
    let block_idx = db.attr_indices(&config.blocking_attrs)?;
    let encoder = ClkEncoder::new(&config.params)?;
    let mut rng = party_rng(config.seed, index);
    let mut st = PartyState {
        index,
        params: config.params.clone(),
        records: Vec::with_capacity(db.len()),
        by_pseudonym: HashMap::with_capacity(db.len()),
        rids: Vec::with_capacity(db.len()),
        skipped: 0,
        mean_grams: 0.0,
    };
    let mut gram_total = 0usize;
    for r in db.records() {
        let grams = crate::bloom::record_qgrams(&db.project(r, &qid_idx), config.params.gram_len);
        match encoder.encode_grams(&grams) {
            Ok(filter) => {
                gram_total += grams.len();
                let bkv = blocking_key(&db.project(r, &block_idx));
                st.push(&mut rng, r.rid.clone(), bkv, filter);
            }
            Err(Error::Unencodable) => st.skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if st.skipped > 0 {
        warn!("party {}: skipped {} unencodable records", index + 1, st.skipped);
    }
    if st.records.is_empty() {
        return Err(Error::protocol("prepare", format!("party {} has no encodable records", index + 1)));
    }
    st.mean_grams = gram_total as f64 / st.records.len() as f64;
    Ok(st)
}

/// The `segment`-th slice of every party's filters, as held by the party
/// responsible for that slice. `from[p]` lists party `p`'s shares in the
/// order they were sent.
#[derive(Clone, Debug)]
pub struct Inbox {
    pub segment: usize,
    pub from: Vec<Vec<SegmentShare>>,
}

impl Inbox {
    pub fn len(&self) -> usize {
        self.from.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Every party splits its filters and sends slice `j` to party `j`.
/// Emits exactly `P(P-1)` messages.
pub fn exchange_segments(parties: &[PartyState], bus: &MessageBus, threaded: bool) -> Result<Vec<Inbox>> {
    let p = parties.len();
    if p != bus.parties() {
        return Err(Error::protocol("exchange", "party count does not match bus"));
    }
    if let Some(bad) = parties.iter().find(|s| s.params != parties[0].params) {
        return Err(Error::protocol(
            "exchange",
            format!("party {} disagrees on Bloom filter parameters", bad.index + 1),
        ));
    }
    let seg_len = parties[0].params.segment_len();

    // own slice for every party, kept locally
    let own: Vec<Vec<SegmentShare>> = par_map(p, threaded, |i| {
        let st = &parties[i];
        let mut per_target: Vec<Vec<SegmentShare>> = vec![Vec::with_capacity(st.records.len()); p];
        for r in &st.records {
            for seg in split(&r.filter, p)? {
                per_target[seg.index - 1].push(SegmentShare {
                    pseudonym: r.pseudonym,
                    bkv: r.bkv.clone(),
                    segment: seg,
                });
            }
        }
        let mut mine = Vec::new();
        for (j, shares) in per_target.into_iter().enumerate() {
            if j == i {
                mine = shares;
                continue;
            }
            bus.send(
                i,
                j,
                &Message::Segments(SegmentBatch {
                    index: (j + 1) as u32,
                    segment_len: seg_len as u32,
                    shares,
                }),
            )?;
        }
        Ok(mine)
    })?;

    let mut own = own.into_iter().map(Some).collect::<Vec<_>>();
    let mut inboxes = Vec::with_capacity(p);
    for (j, mine) in own.iter_mut().enumerate() {
        let mut from: Vec<Option<Vec<SegmentShare>>> = vec![None; p];
        from[j] = mine.take();
        for (sender, msg) in bus.drain(j)? {
            let Message::Segments(batch) = msg else {
                return Err(Error::protocol("exchange", format!("party {} got a non-segment message", j + 1)));
            };
            if batch.index as usize != j + 1 || batch.segment_len as usize != seg_len {
                return Err(Error::protocol(
                    "exchange",
                    format!("party {} received segment {} of length {}", j + 1, batch.index, batch.segment_len),
                ));
            }
            if from[sender].replace(batch.shares).is_some() {
                return Err(Error::protocol("exchange", format!("duplicate batch from party {}", sender + 1)));
            }
        }
        let from = from
            .into_iter()
            .enumerate()
            .map(|(s, f)| f.ok_or_else(|| Error::protocol("exchange", format!("party {} sent nothing to party {}", s + 1, j + 1))))
            .collect::<Result<Vec<_>>>()?;
        inboxes.push(Inbox { segment: j + 1, from });
    }
    Ok(inboxes)
}
