//! Linkage quality, filtering efficiency, bit sensitivity and the
//! frequency attack.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::bits::BitVec;
use crate::bloom::{record_qgrams, split, BloomFilter, BloomParams, ClkEncoder, Segment};
use crate::error::{Error, Result};
use crate::record::Database;

/// True-match tuples: one row per entity held by every party, listing the
/// record id each party uses for it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroundTruth {
    parties: usize,
    entities: Vec<(String, Vec<String>)>,
}

impl GroundTruth {
    pub fn new(parties: usize, entities: Vec<(String, Vec<String>)>) -> Result<Self> {
        if let Some((id, rids)) = entities.iter().find(|(_, r)| r.len() != parties) {
            return Err(Error::Eval(format!("entity {id} lists {} rids for {parties} parties", rids.len())));
        }
        Ok(Self { parties, entities })
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entities(&self) -> &[(String, Vec<String>)] {
        &self.entities
    }

    pub fn tuples(&self) -> HashSet<Vec<String>> {
        self.entities.iter().map(|(_, r)| r.clone()).collect()
    }

    /// Checks that every referenced record exists at its party.
    pub fn check_against(&self, dbs: &[Database]) -> Result<()> {
        if dbs.len() != self.parties {
            return Err(Error::Eval(format!("{} databases for a {}-party truth", dbs.len(), self.parties)));
        }
        let known: Vec<HashSet<&str>> =
            dbs.iter().map(|db| db.records().iter().map(|r| r.rid.as_str()).collect()).collect();
        for (id, rids) in &self.entities {
            for (i, rid) in rids.iter().enumerate() {
                if !known[i].contains(rid.as_str()) {
                    return Err(Error::Eval(format!("entity {id}: party {} has no record {rid}", i + 1)));
                }
            }
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let parties = rdr.headers()?.len().saturating_sub(1);
        if parties == 0 {
            return Err(Error::Eval("truth file has no party columns".into()));
        }
        let mut entities = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let mut it = row.iter().map(String::from);
            let id = it.next().unwrap_or_default();
            entities.push((id, it.collect()));
        }
        Self::new(parties, entities)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let mut header = vec!["entity_id".to_string()];
        header.extend((1..=self.parties).map(|i| format!("p{i}")));
        w.write_record(&header)?;
        for (id, rids) in &self.entities {
            w.write_record(std::iter::once(id).chain(rids))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Quality {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: u64,
    pub predicted: u64,
    pub actual: u64,
}

impl Quality {
    pub fn from_counts(true_positives: u64, predicted: u64, actual: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(true_positives, predicted);
        let recall = ratio(true_positives, actual);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1, true_positives, predicted, actual }
    }

    pub fn insert_into(&self, prefix: &str, out: &mut BTreeMap<String, f64>) {
        out.insert(format!("{prefix}precision"), self.precision);
        out.insert(format!("{prefix}recall"), self.recall);
        out.insert(format!("{prefix}f1"), self.f1);
        out.insert(format!("{prefix}true_positives"), self.true_positives as f64);
        out.insert(format!("{prefix}predicted"), self.predicted as f64);
        out.insert(format!("{prefix}actual"), self.actual as f64);
    }
}

/// Precision, recall and F1 of predicted rid tuples against the truth.
/// Duplicate predictions count once.
pub fn quality(predicted: &[Vec<String>], truth: &GroundTruth) -> Quality {
    let truth = truth.tuples();
    let predicted: HashSet<&Vec<String>> = predicted.iter().collect();
    let tp = predicted.iter().filter(|t| truth.contains(**t)).count() as u64;
    Quality::from_counts(tp, predicted.len() as u64, truth.len() as u64)
}

/// Share of candidate sets removed by filtering: `1 - after / before`.
pub fn reduction_ratio_filter(before: u64, after: u64) -> Result<f64> {
    if before == 0 {
        return Err(Error::Eval("reduction ratio over zero candidates".into()));
    }
    if after > before {
        return Err(Error::Eval(format!("{after} candidates after filtering exceeds {before} before")));
    }
    Ok(1.0 - after as f64 / before as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BitSensitivity {
    pub position: usize,
    /// Distinct q-grams of the database hashing to this bit.
    pub dist: usize,
    /// Records whose filter sets this bit.
    pub freq: usize,
    pub sensitivity: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SensitivityProfile {
    /// Bits set by at least one record, in position order.
    pub bits: Vec<BitSensitivity>,
    pub unique_grams: usize,
}

impl SensitivityProfile {
    pub fn max_sensitivity(&self) -> f64 {
        self.bits.iter().map(|b| b.sensitivity).fold(0.0, f64::max)
    }

    pub fn mean_sensitivity(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.bits.iter().map(|b| b.sensitivity).sum::<f64>() / self.bits.len() as f64
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        for b in &self.bits {
            w.serialize(b)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn encodable<'a>(db: &'a Database, qid_attrs: &[String]) -> Result<Vec<Vec<&'a str>>> {
    let idx = db.attr_indices(qid_attrs)?;
    Ok(db.records().iter().map(|r| db.project(r, &idx)).collect())
}

/// Encodes every record of `db`, dropping records without any q-gram.
pub fn encode_database(db: &Database, qid_attrs: &[String], params: &BloomParams) -> Result<Vec<BloomFilter>> {
    let enc = ClkEncoder::new(params)?;
    let mut out = Vec::with_capacity(db.len());
    for values in encodable(db, qid_attrs)? {
        match enc.encode(&values) {
            Ok(f) => out.push(f),
            Err(Error::Unencodable) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Per-bit `dist`, `freq` and sensitivity `1 / min(dist, freq)` of a
/// party's own encoded database.
pub fn sensitivity_profile(db: &Database, qid_attrs: &[String], params: &BloomParams) -> Result<SensitivityProfile> {
    let enc = ClkEncoder::new(params)?;
    let l = params.bit_len;
    let mut unique = HashSet::new();
    let mut freq = vec![0usize; l];
    for values in encodable(db, qid_attrs)? {
        let grams = record_qgrams(&values, params.gram_len);
        if grams.is_empty() {
            continue;
        }
        for b in enc.encode_grams(&grams)?.bits().iter_ones() {
            freq[b] += 1;
        }
        unique.extend(grams.iter().map(String::from));
    }
    let mut dist = vec![0usize; l];
    for gram in &unique {
        let hit: HashSet<usize> = enc.positions(gram).collect();
        for b in hit {
            dist[b] += 1;
        }
    }
    let bits = (0..l)
        .filter(|&b| freq[b] > 0)
        .map(|b| BitSensitivity {
            position: b,
            dist: dist[b],
            freq: freq[b],
            sensitivity: 1.0 / dist[b].min(freq[b]) as f64,
        })
        .collect();
    Ok(SensitivityProfile { bits, unique_grams: unique.len() })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DisclosureRisk {
    /// Mean probability of suspicion `1 / n_g` over observed patterns.
    pub dr_mean: f64,
    /// Fraction of observed patterns matching exactly one global record.
    pub dr_marketer: f64,
    pub observed: usize,
    /// `n_g` value -> number of observed patterns with that many matches.
    pub n_g: BTreeMap<usize, usize>,
}

/// Matches each observed bit pattern against the patterns of the global
/// records. Patterns with no global match contribute zero suspicion.
pub fn pattern_risk<'a>(
    observed: impl IntoIterator<Item = &'a BitVec>,
    global: impl IntoIterator<Item = BitVec>,
) -> Result<DisclosureRisk> {
    let mut counts: HashMap<BitVec, usize> = HashMap::new();
    for g in global {
        *counts.entry(g).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(Error::Eval("frequency attack needs a non-empty global database".into()));
    }
    let mut risk = DisclosureRisk::default();
    let mut suspicion = 0.0;
    let mut unique = 0usize;
    for o in observed {
        let n = counts.get(o).copied().unwrap_or(0);
        risk.observed += 1;
        *risk.n_g.entry(n).or_default() += 1;
        if n > 0 {
            suspicion += 1.0 / n as f64;
        }
        unique += usize::from(n == 1);
    }
    if risk.observed > 0 {
        risk.dr_mean = suspicion / risk.observed as f64;
        risk.dr_marketer = unique as f64 / risk.observed as f64;
    }
    Ok(risk)
}

/// Frequency attack by the party holding segment position
/// `observed[0].index`: it encodes the global database `global` with the
/// shared parameters and looks up each observed segment among the global
/// records' segments at the same position.
pub fn frequency_attack(
    observed: &[Segment],
    global: &Database,
    qid_attrs: &[String],
    params: &BloomParams,
) -> Result<DisclosureRisk> {
    let index = observed.first().map_or(1, |s| s.index);
    if observed.iter().any(|s| s.index != index) {
        return Err(Error::Eval("observed segments come from different positions".into()));
    }
    if index == 0 || index > params.parties {
        return Err(Error::Eval(format!("segment position {index} outside 1..={}", params.parties)));
    }
    let filters = encode_database(global, qid_attrs, params)?;
    let seg_len = params.segment_len();
    let global = filters.iter().map(|f| f.bits().slice((index - 1) * seg_len, seg_len));
    pattern_risk(observed.iter().map(|s| &s.bits), global)
}

/// Same attack on whole filters, for comparison with segment views.
pub fn full_filter_attack(observed: &[BloomFilter], global: &[BloomFilter]) -> Result<DisclosureRisk> {
    pattern_risk(observed.iter().map(BloomFilter::bits), global.iter().map(|f| f.bits().clone()))
}

#[derive(Clone, Debug, Serialize)]
pub struct AttackSummary {
    pub parties: usize,
    /// Risk seen by the party at each segment position.
    pub per_position: Vec<DisclosureRisk>,
    pub dr_mean: f64,
    pub dr_marketer: f64,
    /// The same attack if whole filters were revealed.
    pub full_filter: DisclosureRisk,
}

/// Runs the frequency attack from every position with `G = D`: the party
/// at position `i` observes segment `i` of every other party's records and
/// knows all records of all parties.
pub fn attack_all_positions(dbs: &[Database], qid_attrs: &[String], params: &BloomParams) -> Result<AttackSummary> {
    let p = params.parties;
    if dbs.len() != p {
        return Err(Error::Eval(format!("{} databases for {p} parties", dbs.len())));
    }
    let per_party: Vec<Vec<BloomFilter>> =
        dbs.iter().map(|db| encode_database(db, qid_attrs, params)).collect::<Result<_>>()?;
    let global: Vec<&BloomFilter> = per_party.iter().flatten().collect();
    let mut per_position = Vec::with_capacity(p);
    for i in 0..p {
        let observed: Vec<Segment> = per_party
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, fs)| fs.iter())
            .map(|f| split(f, p).map(|mut s| s.swap_remove(i)))
            .collect::<Result<_>>()?;
        let seg_len = params.segment_len();
        let patterns = global.iter().map(|f| f.bits().slice(i * seg_len, seg_len));
        per_position.push(pattern_risk(observed.iter().map(|s| &s.bits), patterns)?);
    }
    let others: Vec<BloomFilter> = per_party.iter().skip(1).flatten().cloned().collect();
    let all: Vec<BloomFilter> = global.iter().map(|f| (*f).clone()).collect();
    let full_filter = full_filter_attack(&others, &all)?;
    let avg = |f: fn(&DisclosureRisk) -> f64| per_position.iter().map(f).sum::<f64>() / p as f64;
    Ok(AttackSummary {
        parties: p,
        dr_mean: avg(|r| r.dr_mean),
        dr_marketer: avg(|r| r.dr_marketer),
        per_position,
        full_filter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Record;

    fn tuple(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn truth(rows: &[&[&str]]) -> GroundTruth {
        GroundTruth::new(
            rows[0].len(),
            rows.iter().enumerate().map(|(i, r)| (format!("e{i}"), tuple(r))).collect(),
        )
        .unwrap()
    }

    fn params(l: usize, k: usize, p: usize) -> BloomParams {
        BloomParams::new(l, k, 2, p, b"one".to_vec(), b"two".to_vec()).unwrap()
    }

    fn qids() -> Vec<String> {
        vec!["name".into()]
    }

    fn db(values: &[&str]) -> Database {
        Database::new(
            ["name"],
            values.iter().enumerate().map(|(i, v)| Record::new(format!("r{i}"), [*v])).collect(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let t = truth(&[&["a", "b", "c"], &["d", "e", "f"]]);
        let q = quality(&[tuple(&["a", "b", "c"]), tuple(&["d", "e", "f"])], &t);
        assert_eq!((q.precision, q.recall, q.f1), (1.0, 1.0, 1.0));
        let q = quality(&[], &t);
        assert_eq!((q.precision, q.recall, q.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn three_predicted_two_correct_four_true() {
        let t = truth(&[&["a", "b", "c"], &["d", "e", "f"], &["g", "h", "i"], &["j", "k", "l"]]);
        let pred = [tuple(&["a", "b", "c"]), tuple(&["d", "e", "f"]), tuple(&["a", "e", "i"])];
        let q = quality(&pred, &t);
        assert!((q.precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(q.recall, 0.5);
        assert!((q.f1 - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn filter_reduction_ratio() {
        assert_eq!(reduction_ratio_filter(12, 9).unwrap(), 0.25);
        assert_eq!(reduction_ratio_filter(7, 7).unwrap(), 0.0);
        assert_eq!(reduction_ratio_filter(7, 0).unwrap(), 1.0);
        assert!(reduction_ratio_filter(0, 0).is_err());
        assert!(reduction_ratio_filter(3, 4).is_err());
    }

    #[test]
    fn truth_csv_round_trip() {
        let t = truth(&[&["p1-1", "p2-7", "p3-2"]]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "entity_id,p1,p2,p3\ne0,p1-1,p2-7,p3-2\n");
        assert_eq!(GroundTruth::read_csv(&buf[..]).unwrap(), t);
    }

    #[test]
    fn single_gram_single_hash_is_fully_sensitive() {
        let prof = sensitivity_profile(&db(&["ab"]), &qids(), &params(30, 1, 3)).unwrap();
        assert_eq!(prof.bits.len(), 1);
        let b = prof.bits[0];
        assert_eq!((b.dist, b.freq, b.sensitivity), (1, 1, 1.0));
        assert_eq!(prof.unique_grams, 1);
    }

    #[test]
    fn sensitivity_matches_recount() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let values: Vec<String> = (0..100)
            .map(|_| (0..rng.random_range(2..9)).map(|_| rng.random_range(b'a'..=b'h') as char).collect())
            .collect();
        let refs: Vec<&str> = values.iter().map(String::as_str).collect();
        let p = params(60, 4, 3);
        let prof = sensitivity_profile(&db(&refs), &qids(), &p).unwrap();

        // recount straight from the strings
        let enc = ClkEncoder::new(&p).unwrap();
        let mut grams_of: Vec<HashSet<String>> = Vec::new();
        for v in &values {
            let chars: Vec<char> = v.chars().collect();
            grams_of.push(chars.windows(2).map(|w| w.iter().collect()).collect());
        }
        let all: HashSet<&String> = grams_of.iter().flatten().collect();
        for b in &prof.bits {
            let dist = all.iter().filter(|g| enc.positions(g).any(|x| x == b.position)).count();
            let freq = grams_of
                .iter()
                .filter(|gs| gs.iter().any(|g| enc.positions(g).any(|x| x == b.position)))
                .count();
            assert_eq!((b.dist, b.freq), (dist, freq), "bit {}", b.position);
        }
        let set: usize = (0..60)
            .filter(|&x| grams_of.iter().any(|gs| gs.iter().any(|g| enc.positions(g).any(|y| y == x))))
            .count();
        assert_eq!(prof.bits.len(), set);
        assert!(prof.bits.iter().all(|b| b.sensitivity > 0.0 && b.sensitivity <= 1.0));
    }

    #[test]
    fn unique_patterns_give_full_risk() {
        let p = params(300, 10, 3);
        let d = db(&["alpha", "bravo", "charlie", "delta", "echo"]);
        let filters = encode_database(&d, &qids(), &p).unwrap();
        let observed: Vec<Segment> = filters.iter().map(|f| split(f, 3).unwrap().remove(0)).collect();
        let r = frequency_attack(&observed, &d, &qids(), &p).unwrap();
        assert_eq!((r.dr_mean, r.dr_marketer), (1.0, 1.0));
        assert_eq!(r.n_g[&1], 5);
    }

    #[test]
    fn identical_records_give_minimal_risk() {
        let p = params(30, 2, 3);
        let d = db(&["same", "same", "same", "same"]);
        let filters = encode_database(&d, &qids(), &p).unwrap();
        let observed: Vec<Segment> = filters.iter().map(|f| split(f, 3).unwrap().remove(1)).collect();
        let r = frequency_attack(&observed, &d, &qids(), &p).unwrap();
        assert_eq!(r.dr_mean, 0.25);
        assert_eq!(r.dr_marketer, 0.0);
    }

    #[test]
    fn empty_global_is_an_error() {
        let p = params(30, 2, 3);
        assert!(frequency_attack(&[], &db(&[]), &qids(), &p).is_err());
        assert!(full_filter_attack(&[], &[]).is_err());
    }

    #[test]
    fn segments_never_reveal_more_than_filters() {
        use crate::datagen::{generate, GenSpec, Lexicons};
        let mut spec = GenSpec::new(3, 300);
        spec.corrupted = 0.2;
        let ds = generate(&spec, &Lexicons::bundled()).unwrap();
        let q: Vec<String> = ["given_name", "surname"].map(String::from).to_vec();
        let s = attack_all_positions(&ds.parties, &q, &params(60, 3, 3)).unwrap();
        for r in &s.per_position {
            assert!(r.dr_marketer <= r.dr_mean);
        }
        let full = &s.full_filter;
        let first = &s.per_position[0];
        assert!(first.dr_mean <= full.dr_mean + 1e-12);
        assert!(first.dr_marketer <= full.dr_marketer + 1e-12);
    }
}
