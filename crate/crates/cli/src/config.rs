//! Run configuration: flat `key = value` lines grouped under `[section]`
//! headers, overridden by command-line flags.
//!
//! ```text
//! # defaults shown
//! [bloom]
//! bit_len = 500
//! num_hashes = 20
//!
//! [protocol]
//! mode = mpam
//! parties = 3
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use log::warn;
use mpprl::baseline::LaiScope;
use mpprl::bloom::BloomParams;
use mpprl::datagen::GenSpec;
use mpprl::protocol::{ProtocolConfig, DEFAULT_BLOCKING, DEFAULT_QIDS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Mpam,
    MpamF,
    Lai,
}

impl FromStr for Mode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mpam" => Ok(Mode::Mpam),
            "mpam-f" | "mpamf" => Ok(Mode::MpamF),
            "lai" => Ok(Mode::Lai),
            other => bail!("unknown mode `{other}` (expected mpam, mpam-f or lai)"),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Mpam => "mpam",
            Mode::MpamF => "mpam-f",
            Mode::Lai => "lai",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub parties: usize,
    pub bit_len: usize,
    pub num_hashes: usize,
    pub gram_len: usize,
    pub key1: String,
    pub key2: String,
    pub match_threshold: f64,
    /// Defaults to the match threshold in `mpam-f` mode.
    pub segment_threshold: Option<f64>,
    pub qid_attrs: Vec<String>,
    pub blocking_attrs: Vec<String>,
    pub seed: u64,
    pub rotate_initiator: bool,
    pub threaded: bool,
    pub lai_scope: LaiScope,

    pub records_per_party: usize,
    pub overlap: f64,
    pub corrupted: f64,
    pub max_edits: usize,

    pub bench_parties: Vec<usize>,
    pub bench_sizes: Vec<usize>,
    pub bench_modes: Vec<Mode>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mpam,
            parties: 3,
            bit_len: 500,
            num_hashes: 20,
            gram_len: 2,
            key1: "mpprl-shared-key-1".into(),
            key2: "mpprl-shared-key-2".into(),
            match_threshold: 0.8,
            segment_threshold: None,
            qid_attrs: DEFAULT_QIDS.iter().map(|s| s.to_string()).collect(),
            blocking_attrs: DEFAULT_BLOCKING.iter().map(|s| s.to_string()).collect(),
            seed: 42,
            rotate_initiator: false,
            threaded: false,
            lai_scope: LaiScope::Database,
            records_per_party: 1000,
            overlap: 0.5,
            corrupted: 0.2,
            max_edits: 3,
            bench_parties: vec![3, 5, 7],
            bench_sizes: vec![1000, 2000, 4000],
            bench_modes: vec![Mode::Mpam, Mode::MpamF, Mode::Lai],
        }
    }
}

fn list<T: FromStr>(v: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow!("`{s}`: {e}")))
        .collect()
}

fn parse<T: FromStr>(v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| anyhow!("`{v}`: {e}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| anyhow!("line {}: unterminated section", n + 1))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            cfg.set(&key, v.trim()).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(cfg)
    }

    /// Sets one `section.key` value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "bloom.bit_len" => self.bit_len = parse(v)?,
            "bloom.num_hashes" => self.num_hashes = parse(v)?,
            "bloom.gram_len" => self.gram_len = parse(v)?,
            "bloom.key1" => self.key1 = v.to_string(),
            "bloom.key2" => self.key2 = v.to_string(),
            "protocol.mode" => self.mode = parse(v)?,
            "protocol.parties" => self.parties = parse(v)?,
            "protocol.match_threshold" => self.match_threshold = parse(v)?,
            "protocol.segment_threshold" => {
                self.segment_threshold = match v {
                    "" | "none" | "off" => None,
                    v => Some(parse(v)?),
                }
            }
            "protocol.qid_attrs" => self.qid_attrs = list(v)?,
            "protocol.blocking_attrs" => self.blocking_attrs = list(v)?,
            "protocol.seed" => self.seed = parse(v)?,
            "protocol.rotate_initiator" => self.rotate_initiator = parse(v)?,
            "protocol.threaded" => self.threaded = parse(v)?,
            "protocol.lai_scope" => {
                self.lai_scope = match v {
                    "database" => LaiScope::Database,
                    "blocks" => LaiScope::Blocks,
                    other => bail!("unknown lai scope `{other}` (expected database or blocks)"),
                }
            }
            "gen.records_per_party" => self.records_per_party = parse(v)?,
            "gen.overlap" => self.overlap = parse(v)?,
            "gen.corrupted" => self.corrupted = parse(v)?,
            "gen.max_edits" => self.max_edits = parse(v)?,
            "bench.parties" => self.bench_parties = list(v)?,
            "bench.sizes" => self.bench_sizes = list(v)?,
            "bench.modes" => self.bench_modes = list(v)?,
            other => bail!("unknown configuration key `{other}`"),
        }
        Ok(())
    }

    /// Bloom parameters for `parties`. The bit length is rounded up to the
    /// next multiple of the party count so filters split evenly; the
    /// returned note says so when that happens.
    pub fn bloom_params(&self, parties: usize) -> Result<(BloomParams, Option<String>)> {
        let l = BloomParams::splittable_len(self.bit_len, parties);
        let note = (l != self.bit_len).then(|| format!("bit length {} rounded up to {l} for {parties} parties", self.bit_len));
        if let Some(n) = &note {
            warn!("{n}");
        }
        let params = BloomParams::new(
            l,
            self.num_hashes,
            self.gram_len,
            parties,
            self.key1.as_bytes().to_vec(),
            self.key2.as_bytes().to_vec(),
        )?;
        Ok((params, note))
    }

    pub fn protocol_config(&self, parties: usize, mode: Mode) -> Result<(ProtocolConfig, Option<String>)> {
        let (params, note) = self.bloom_params(parties)?;
        let mut c = ProtocolConfig::new(params);
        c.match_threshold = self.match_threshold;
        c.segment_threshold = match mode {
            Mode::MpamF => Some(self.segment_threshold.unwrap_or(self.match_threshold)),
            _ => None,
        };
        c.qid_attrs = self.qid_attrs.clone();
        c.blocking_attrs = self.blocking_attrs.clone();
        c.seed = self.seed;
        c.rotate_initiator = self.rotate_initiator;
        c.threaded = self.threaded;
        c.validate()?;
        Ok((c, note))
    }

    pub fn gen_spec(&self, parties: usize, records: usize) -> GenSpec {
        GenSpec {
            parties,
            records_per_party: records,
            overlap: self.overlap,
            corrupted: self.corrupted,
            max_edits: self.max_edits,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_experimental_setting() {
        let c = RunConfig::default();
        assert_eq!((c.bit_len, c.num_hashes, c.gram_len, c.match_threshold), (500, 20, 2, 0.8));
        assert_eq!(c.mode, Mode::Mpam);
    }

    #[test]
    fn parses_sections_and_comments() {
        // every key belongs to a section
        assert!(RunConfig::parse("seed = 1\n").is_err());
        let c = RunConfig::parse(
            "# run\n[bloom]\nbit_len = 1000   # longer\nkey1 = s3cret\n\n[protocol]\nmode = mpam-f\nparties=5\nsegment_threshold = 0.7\nqid_attrs = given_name, surname\n[bench]\nmodes = mpam,lai\nsizes=10,20\n",
        )
        .unwrap();
        assert_eq!(c.bit_len, 1000);
        assert_eq!(c.key1, "s3cret");
        assert_eq!(c.mode, Mode::MpamF);
        assert_eq!(c.parties, 5);
        assert_eq!(c.segment_threshold, Some(0.7));
        assert_eq!(c.qid_attrs, ["given_name", "surname"]);
        assert_eq!(c.bench_modes, [Mode::Mpam, Mode::Lai]);
        assert_eq!(c.bench_sizes, [10, 20]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("[bloom]\nbits = 3\n").is_err());
        assert!(RunConfig::parse("[protocol]\nmode = fast\n").is_err());
        assert!(RunConfig::parse("[protocol]\nparties = many\n").is_err());
        assert!(RunConfig::parse("[bloom\nbit_len = 3\n").is_err());
        assert!(RunConfig::parse("[bloom]\nbit_len\n").is_err());
    }

    #[test]
    fn bit_length_rounds_to_party_multiple() {
        let c = RunConfig::default();
        let (p, note) = c.bloom_params(3).unwrap();
        assert_eq!(p.bit_len, 501);
        assert!(note.is_some());
        let (p, note) = c.bloom_params(5).unwrap();
        assert_eq!(p.bit_len, 500);
        assert!(note.is_none());
    }

    #[test]
    fn filtered_mode_defaults_segment_threshold_to_match_threshold() {
        let mut c = RunConfig::default();
        let (pc, _) = c.protocol_config(3, Mode::MpamF).unwrap();
        assert_eq!(pc.segment_threshold, Some(0.8));
        c.segment_threshold = Some(0.6);
        assert_eq!(c.protocol_config(3, Mode::MpamF).unwrap().0.segment_threshold, Some(0.6));
        assert_eq!(c.protocol_config(3, Mode::Mpam).unwrap().0.segment_threshold, None);
    }
}
