use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use mpprl::baseline::{lai_link, predicted_tuples};
use mpprl::datagen::{generate, Dataset, Lexicons};
use mpprl::eval::{attack_all_positions, quality, reduction_ratio_filter, sensitivity_profile, GroundTruth, Quality};
use mpprl::protocol::run_linkage;
use mpprl::record::Database;
use mpprl::report::RunReport;

use crate::config::{Mode, RunConfig};

/// One linked tuple: a rid (or pseudonym) per party and its similarity.
pub type MatchRow = (Vec<String>, f64);

pub fn cmd_gen(cfg: &RunConfig, out_dir: &Path) -> Result<Dataset> {
    let spec = cfg.gen_spec(cfg.parties, cfg.records_per_party);
    let ds = generate(&spec, &Lexicons::bundled())?;
    ds.save(out_dir).with_context(|| format!("writing dataset to {}", out_dir.display()))?;
    info!(
        "wrote {} parties x {} records and {} truth tuples to {}",
        cfg.parties,
        cfg.records_per_party,
        ds.truth.len(),
        out_dir.display()
    );
    Ok(ds)
}

pub fn load_parties(dir: &Path, parties: usize) -> Result<Vec<Database>> {
    (0..parties)
        .map(|i| {
            let path = Dataset::party_path(dir, i);
            Database::load(&path).with_context(|| format!("reading {}", path.display()))
        })
        .collect()
}

/// Runs one linkage mode. With ground truth, match rows carry real record
/// ids and the report gains an evaluation block; otherwise MPAM rows carry
/// pseudonyms.
pub fn run_mode(cfg: &RunConfig, mode: Mode, dbs: &[Database], truth: Option<&GroundTruth>) -> Result<(RunReport, Vec<MatchRow>)> {
    let parties = dbs.len();
    let (pc, note) = cfg.protocol_config(parties, mode)?;
    let (mut report, rows) = match mode {
        Mode::Mpam | Mode::MpamF => {
            let out = run_linkage(dbs, &pc)?;
            let rows: Vec<MatchRow> = out
                .matches
                .iter()
                .map(|m| {
                    let ids = match truth {
                        Some(_) => out.true_rids(&m.candidate),
                        None => m.candidate.members.iter().map(|p| p.to_string()).collect(),
                    };
                    (ids, m.dice)
                })
                .collect();
            let mut report = out.report;
            if mode == Mode::MpamF && report.candidates_total > 0 {
                let rr = reduction_ratio_filter(report.candidates_total, report.candidates_after_filter)?;
                report.evaluation.insert("rr_f".into(), rr);
            }
            (report, rows)
        }
        Mode::Lai => {
            let out = lai_link(dbs, &pc, &cfg.lai_scope)?;
            let rows: Vec<MatchRow> = predicted_tuples(dbs, &out, &pc.qid_attrs)?.into_iter().map(|t| (t, 1.0)).collect();
            (out.report, rows)
        }
    };
    report.notes.extend(note);
    if let Some(truth) = truth {
        let tuples: Vec<Vec<String>> = rows.iter().map(|r| r.0.clone()).collect();
        quality(&tuples, truth).insert_into("", &mut report.evaluation);
    }
    Ok((report, rows))
}

pub fn write_matches(path: &Path, parties: usize, rows: &[MatchRow]) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (1..=parties).map(|i| format!("p{i}")).collect();
    let _ = writeln!(out, "{},dice", header.join(","));
    for (ids, dice) in rows {
        let _ = writeln!(out, "{},{dice:.6}", ids.join(","));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_matches(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("matches file is empty")?;
    let cols = header.split(',').count();
    if cols < 2 || !header.ends_with(",dice") {
        bail!("{}: expected header p1,...,pP,dice", path.display());
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| {
            let mut f: Vec<String> = l.split(',').map(String::from).collect();
            if f.len() != cols {
                bail!("{}: line {} has {} fields, expected {cols}", path.display(), n + 2, f.len());
            }
            f.pop();
            Ok(f)
        })
        .collect()
}

pub struct LinkOutput {
    pub report: RunReport,
    pub report_path: PathBuf,
    pub matches_path: PathBuf,
}

pub fn cmd_link(cfg: &RunConfig, data_dir: &Path, truth: Option<&Path>, out_dir: &Path) -> Result<LinkOutput> {
    let dbs = load_parties(data_dir, cfg.parties)?;
    let truth_path = truth.map(Path::to_path_buf).or_else(|| {
        let p = Dataset::truth_path(data_dir);
        p.exists().then_some(p)
    });
    let truth = match &truth_path {
        Some(p) => {
            let t = GroundTruth::load(p).with_context(|| format!("reading {}", p.display()))?;
            t.check_against(&dbs)?;
            Some(t)
        }
        None => None,
    };
    let (report, rows) = run_mode(cfg, cfg.mode, &dbs, truth.as_ref())?;
    fs::create_dir_all(out_dir)?;
    let matches_path = out_dir.join("matches.csv");
    let report_path = out_dir.join("report.json");
    write_matches(&matches_path, cfg.parties, &rows)?;
    fs::write(&report_path, report.to_json())?;
    fs::write(out_dir.join("report.txt"), report.to_key_value())?;
    Ok(LinkOutput { report, report_path, matches_path })
}

pub fn cmd_eval(matches: &Path, truth: &Path) -> Result<Quality> {
    let predicted = read_matches(matches)?;
    let truth = GroundTruth::load(truth).with_context(|| format!("reading {}", truth.display()))?;
    if let Some(bad) = predicted.iter().find(|t| t.len() != truth.parties()) {
        bail!("match tuple {bad:?} does not have {} parties", truth.parties());
    }
    Ok(quality(&predicted, &truth))
}

pub fn cmd_attack(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<serde_json::Value> {
    let dbs = load_parties(data_dir, cfg.parties)?;
    let (params, note) = cfg.bloom_params(cfg.parties)?;
    let summary = attack_all_positions(&dbs, &cfg.qid_attrs, &params)?;
    fs::create_dir_all(out_dir)?;
    let mut sensitivity = Vec::new();
    for (i, db) in dbs.iter().enumerate() {
        let prof = sensitivity_profile(db, &cfg.qid_attrs, &params)?;
        let path = out_dir.join(format!("sensitivity_p{}.csv", i + 1));
        prof.write_csv(fs::File::create(&path)?)?;
        sensitivity.push(serde_json::json!({
            "party": i + 1,
            "bits_set": prof.bits.len(),
            "unique_grams": prof.unique_grams,
            "max_sensitivity": prof.max_sensitivity(),
            "mean_sensitivity": prof.mean_sensitivity(),
            "csv": path,
        }));
    }
    let doc = serde_json::json!({
        "parties": cfg.parties,
        "bit_len": params.bit_len,
        "segment_len": params.segment_len(),
        "global_equals_database": true,
        "dr_mean": summary.dr_mean,
        "dr_marketer": summary.dr_marketer,
        "per_position": summary.per_position,
        "full_filter": summary.full_filter,
        "sensitivity": sensitivity,
        "notes": note.into_iter().collect::<Vec<_>>(),
    });
    fs::write(out_dir.join("attack.json"), serde_json::to_string_pretty(&doc)?)?;
    Ok(doc)
}

pub const BENCH_HEADER: &str =
    "mode,parties,records,candidates_total,candidates_after_filter,rr_f,matches,f1,runtime_ms,memory_peak_bytes,messages,bytes";

/// One row per (mode, parties, records) cell, each on freshly generated data.
pub fn cmd_bench(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<String>> {
    let mut rows = Vec::new();
    let lex = Lexicons::bundled();
    let mut seen = HashSet::new();
    for &p in &cfg.bench_parties {
        for &n in &cfg.bench_sizes {
            if !seen.insert((p, n)) {
                continue;
            }
            let ds = generate(&cfg.gen_spec(p, n), &lex)?;
            for &mode in &cfg.bench_modes {
                let (report, _) = run_mode(cfg, mode, &ds.parties, Some(&ds.truth))
                    .with_context(|| format!("bench cell mode={mode} parties={p} records={n}"))?;
                let rr = report.evaluation.get("rr_f").map_or(String::new(), |v| format!("{v:.6}"));
                let peak = report.memory_peak_bytes_per_step.values().max().copied().unwrap_or(0);
                let row = format!(
                    "{mode},{p},{n},{},{},{rr},{},{:.6},{:.3},{peak},{},{}",
                    report.candidates_total,
                    report.candidates_after_filter,
                    report.matches,
                    report.evaluation.get("f1").copied().unwrap_or(0.0),
                    report.total_runtime_ms(),
                    report.messages,
                    report.bytes,
                );
                info!("{row}");
                rows.push(row);
            }
        }
    }
    fs::create_dir_all(out_dir)?;
    let mut text = format!("{BENCH_HEADER}\n");
    for r in &rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(out_dir.join("bench.csv"), text)?;
    Ok(rows)
}
