//! The multi-party linkage protocol.
//!
//! Each party encodes its records into CLK Bloom filters, blocks them by
//! Soundex keys and replaces record ids with run-scoped pseudonyms. Filters
//! are cut into `P` segments and party `i` receives segment `i` of every
//! record. Within each block common to all parties, party `i` counts the
//! common 1-bits `c_i` of segment `i` for every candidate tuple, optionally
//! pruning tuples whose partial segment similarity is already too low. The
//! `c_i` and the full-filter counts `x_i` are then summed around a masked
//! ring, and the initiator classifies each tuple by `P * sum(c) / sum(x)`.
//!
//! Only [`message::Message`] values cross party boundaries.

pub mod bus;
pub mod candidates;
pub mod message;
pub mod party;
pub mod ring;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bloom::{dice_from_counts, optimal_k, BloomParams};
use crate::error::{Error, Result};
use crate::record::Database;
use crate::report::RunReport;
use crate::securesum::{Counts, OFFSET_RANGE};

pub use bus::MessageBus;
pub use candidates::{
    common_bkvs, compute_partial_counts, compute_partial_counts_filtered, CandidateSpace, PartyCounts,
};
pub use message::Message;
pub use party::{exchange_segments, prepare_party, Inbox, PartyState};
pub use ring::{run_secure_sum, ShardSums};

/// Opaque per-run record identifier standing in for a real record id.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pseudonym(pub [u8; 16]);

impl fmt::Display for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pseudonym({self})")
    }
}

impl Serialize for Pseudonym {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunId(pub [u8; 16]);

/// The `segment.index`-th slice of one record's filter, as sent to the
/// party that owns that slice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentShare {
    pub pseudonym: Pseudonym,
    pub bkv: String,
    pub segment: crate::bloom::Segment,
}

/// One record per party, all from the same block. `members[i]` belongs to
/// party `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CandidateSet {
    pub key: u64,
    pub bkv: String,
    pub members: Vec<Pseudonym>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchResult {
    pub candidate: CandidateSet,
    pub dice: f64,
    pub is_match: bool,
}

#[derive(Clone, Debug)]
pub struct ProtocolConfig {
    pub params: BloomParams,
    /// `s_t`: a tuple matches when its Dice similarity is at least this.
    pub match_threshold: f64,
    /// `s_m`: segment-similarity pruning threshold; `None` disables filtering.
    pub segment_threshold: Option<f64>,
    pub qid_attrs: Vec<String>,
    pub blocking_attrs: Vec<String>,
    pub seed: u64,
    /// Shard candidates so that every party initiates one secure sum.
    pub rotate_initiator: bool,
    /// Run party-local steps on one thread per party.
    pub threaded: bool,
}

pub const DEFAULT_QIDS: [&str; 4] = ["given_name", "surname", "suburb", "postcode"];
pub const DEFAULT_BLOCKING: [&str; 2] = ["given_name", "surname"];

impl ProtocolConfig {
    pub fn new(params: BloomParams) -> Self {
        Self {
            params,
            match_threshold: 0.8,
            segment_threshold: None,
            qid_attrs: DEFAULT_QIDS.iter().map(|s| s.to_string()).collect(),
            blocking_attrs: DEFAULT_BLOCKING.iter().map(|s| s.to_string()).collect(),
            seed: 0,
            rotate_initiator: false,
            threaded: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.match_threshold > 0.0 && self.match_threshold <= 1.0) {
            return Err(Error::Config(format!("match threshold {} outside (0, 1]", self.match_threshold)));
        }
        if let Some(sm) = self.segment_threshold {
            if !(0.0..=1.0).contains(&sm) {
                return Err(Error::Config(format!("segment threshold {sm} outside [0, 1]")));
            }
        }
        if self.qid_attrs.is_empty() {
            return Err(Error::Config("no QID attributes".into()));
        }
        if self.blocking_attrs.is_empty() {
            return Err(Error::Config("no blocking attributes".into()));
        }
        Ok(())
    }

    pub fn mode_name(&self) -> &'static str {
        if self.segment_threshold.is_some() {
            "mpam-f"
        } else {
            "mpam"
        }
    }
}

/// Candidate key, Dice similarity and decision for each summed candidate.
pub fn classify(sums: &[Counts], parties: usize, match_threshold: f64) -> Vec<(u64, f64, bool)> {
    sums.iter()
        .map(|s| {
            let dice = dice_from_counts(parties, s.c, s.x);
            (s.key, dice, dice >= match_threshold)
        })
        .collect()
}

pub(crate) fn par_map<T, F>(n: usize, threaded: bool, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if !threaded {
        return (0..n).map(f).collect();
    }
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = (0..n).map(|i| scope.spawn(move || f(i))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("party thread panicked"))
            .collect()
    })
}

/// Everything a simulated run produces. `parties` keeps each party's
/// private state so callers can resolve pseudonyms for evaluation.
pub struct LinkageOutcome {
    pub matches: Vec<MatchResult>,
    /// Every summed candidate with its similarity, as known to the initiators.
    pub evaluated: Vec<MatchResult>,
    pub report: RunReport,
    pub parties: Vec<PartyState>,
    pub space: CandidateSpace,
}

impl LinkageOutcome {
    /// Real record ids of a candidate, looked up party by party.
    pub fn true_rids(&self, cand: &CandidateSet) -> Vec<String> {
        cand.members
            .iter()
            .zip(&self.parties)
            .map(|(p, st)| st.true_rid(p).unwrap_or("?").to_string())
            .collect()
    }
}

fn run_id(seed: u64) -> RunId {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RunId(rng.random())
}

/// Runs the whole protocol over `dbs`, one database per party.
pub fn run_linkage(dbs: &[Database], config: &ProtocolConfig) -> Result<LinkageOutcome> {
    config.validate()?;
    let p = config.params.parties;
    if dbs.len() != p {
        return Err(Error::Config(format!("{} databases for {} parties", dbs.len(), p)));
    }
    let mut report = RunReport {
        mode: config.mode_name().into(),
        parties: p,
        records_per_party: dbs.iter().map(Database::len).collect(),
        bit_len: config.params.bit_len,
        num_hashes: config.params.num_hashes,
        gram_len: config.params.gram_len,
        match_threshold: config.match_threshold,
        segment_threshold: config.segment_threshold,
        initiator_rotation: config.rotate_initiator,
        offset_range: OFFSET_RANGE,
        ..Default::default()
    };
    report
        .notes
        .push("block keys travel as cleartext Soundex codes beside pseudonymous record ids".into());

    let parties = report.step("prepare", || par_map(p, config.threaded, |i| prepare_party(i, &dbs[i], config)))?;
    report.skipped_records = parties.iter().map(PartyState::skipped).collect();
    let encoded: usize = parties.iter().map(|s| s.records().len()).sum();
    report.mean_grams =
        parties.iter().map(|s| s.mean_grams() * s.records().len() as f64).sum::<f64>() / encoded as f64;
    report.implied_optimal_k = optimal_k(config.params.bit_len, report.mean_grams.max(f64::MIN_POSITIVE));

    let bus = MessageBus::new(run_id(config.seed), p);
    let inboxes = report.step("exchange", || exchange_segments(&parties, &bus, config.threaded))?;

    let common = report.step("blocks", || {
        let views: Vec<Vec<String>> = inboxes.iter().map(common_bkvs).collect();
        if views.iter().any(|v| v != &views[0]) {
            return Err(Error::protocol("blocks", "parties disagree on common blocks"));
        }
        Ok(views.into_iter().next().unwrap_or_default())
    })?;
    report.common_blocks = common.len();

    let space = CandidateSpace::from_inbox(&inboxes[0], &common)?;
    report.candidates_total = space.total();

    let counted = report.step("partial_counts", || {
        par_map(p, config.threaded, |i| match config.segment_threshold {
            Some(sm) => compute_partial_counts_filtered(&parties[i], &inboxes[i], &common, sm),
            None => compute_partial_counts(&parties[i], &inboxes[i], &common),
        })
    })?;
    report.comparisons_per_party = counted.iter().map(|c| c.comparisons).collect();
    drop(inboxes);

    let counts: Vec<Vec<Counts>> = if config.segment_threshold.is_some() {
        report.step("reconcile", || {
            let survivors: Vec<Vec<u64>> =
                counted.iter().map(|c| c.counts.iter().map(|x| x.key).collect()).collect();
            let views = ring::reconcile_survivors(&survivors, &bus)?;
            Ok(counted.iter().zip(&views).map(|(c, keep)| ring::restrict(&c.counts, keep)).collect())
        })?
    } else {
        counted.into_iter().map(|c| c.counts).collect()
    };
    report.candidates_after_filter = counts[0].len() as u64;

    let shards = report.step("secure_sum", || run_secure_sum(&counts, &bus, config.seed, config.rotate_initiator))?;
    drop(counts);

    let (evaluated, matches) = report.step("classify", || {
        let mut evaluated = Vec::new();
        let mut per_initiator = Vec::new();
        for shard in &shards {
            let decided = classify(&shard.sums, p, config.match_threshold);
            per_initiator.push((
                shard.initiator,
                decided.iter().filter(|d| d.2).map(|d| (d.0, d.1)).collect::<Vec<_>>(),
            ));
            evaluated.extend(decided);
        }
        let views = ring::broadcast_results(&per_initiator, &bus)?;
        if views.iter().any(|v| v != &views[0]) {
            return Err(Error::protocol("classify", "parties received different match lists"));
        }
        evaluated.sort_by_key(|e| e.0);
        let decode = |key: u64| {
            space
                .decode(key)
                .ok_or_else(|| Error::protocol("classify", format!("unknown candidate key {key}")))
        };
        let evaluated = evaluated
            .into_iter()
            .map(|(key, dice, is_match)| Ok(MatchResult { candidate: decode(key)?, dice, is_match }))
            .collect::<Result<Vec<_>>>()?;
        let matches = views[0]
            .iter()
            .map(|&(key, dice)| Ok(MatchResult { candidate: decode(key)?, dice, is_match: true }))
            .collect::<Result<Vec<_>>>()?;
        Ok((evaluated, matches))
    })?;

    let stats = bus.stats();
    report.messages = stats.messages;
    report.bytes = stats.bytes;
    report.bytes_by_kind = stats.by_kind.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    report.segment_payload_bytes = stats.segment_payload_bytes;
    report.segment_metadata_bytes = stats.segment_metadata_bytes;
    report.matches = matches.len();

    Ok(LinkageOutcome {
        matches,
        evaluated,
        report,
        parties,
        space,
    })
}
