//! Serializable experiment configurations and their execution.
//!
//! Every run writes `run.json` (the exact configuration) into its output
//! directory; [`replay`] re-executes such a file. Apart from timing columns and
//! the manifest's creation stamp, outputs depend only on the configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_dataset, CrpDatabase};
use crate::error::{Error, Result};
use crate::fhd::{fhd_stats, tuned_params, GaborParams, Summary};
use crate::image::Transform;
use crate::io::load_image;
use crate::matcher::{bench_search, match_matrix, with_threads, MatchParams};
use crate::protocol::{
    enroll, identify, rotation_suite, transform_suite, verify, AuthPolicy, RobustnessReport,
};
use crate::sift::{detect_and_describe, FeatureSet, SiftParams};
use crate::speckle::{make_puf, AcquisitionParams, Archetype};

pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub archetype: Archetype,
    pub n: usize,
    pub puf_seed: u64,
    pub dataset_seed: u64,
    pub acquisition: AcquisitionParams,
    /// Second acquisition of the same challenges, written to `t1_out`.
    #[serde(default)]
    pub t1: Option<(AcquisitionParams, PathBuf)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollConfig {
    pub db: PathBuf,
    pub sift: SiftParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub db: PathBuf,
    pub probe: PathBuf,
    pub claimed_id: u32,
    pub policy: AuthPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyConfig {
    pub db: PathBuf,
    pub probe: PathBuf,
    /// Search only the first `limit` entries.
    #[serde(default)]
    pub limit: Option<usize>,
    pub policy: AuthPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixConfig {
    /// Reference database (rows are its entries).
    pub db: PathBuf,
    /// Probe database (columns); defaults to the reference.
    #[serde(default)]
    pub probe_db: Option<PathBuf>,
    pub n: usize,
    pub mds: Vec<f64>,
    #[serde(default)]
    pub cross_check: bool,
    pub sift: SiftParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhdConfig {
    pub t0: PathBuf,
    pub t1: PathBuf,
    /// Gabor wavelength in px; tuned to the mean grain size of `t0` when absent.
    #[serde(default)]
    pub wavelength: Option<f64>,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotateConfig {
    pub db: PathBuf,
    pub n: usize,
    pub angles: Vec<f64>,
    pub policy: AuthPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub db: PathBuf,
    pub target: u32,
    #[serde(default)]
    pub limit: Option<usize>,
    pub transforms: Vec<Transform>,
    pub policy: AuthPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchSource {
    /// An enrolled database on disk.
    Path(PathBuf),
    /// A database synthesized (ideal acquisition) and enrolled in memory.
    Synth { archetype: Archetype, n: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub source: BenchSource,
    pub probe_id: u32,
    pub thread_counts: Vec<usize>,
    pub md: f64,
    pub sift: SiftParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    Synth(SynthConfig),
    Enroll(EnrollConfig),
    Verify(VerifyConfig),
    Identify(IdentifyConfig),
    Matrix(MatrixConfig),
    Fhd(FhdConfig),
    Rotate(RotateConfig),
    Transform(TransformConfig),
    Bench(BenchConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub out: PathBuf,
    /// Worker cap for the whole run.
    pub threads: usize,
    #[serde(flatten)]
    pub command: Command,
}

/// Result of a run: `decision` is set by commands that accept or reject.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub decision: Option<bool>,
    pub summary: String,
}

impl Outcome {
    fn info(summary: String) -> Self {
        Outcome { decision: None, summary }
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Re-executes a `run.json`, optionally into a different output directory.
pub fn replay(path: impl AsRef<Path>, out: Option<PathBuf>) -> Result<Outcome> {
    let mut cfg = load_config(path)?;
    if let Some(o) = out {
        cfg.out = o;
    }
    execute(&cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<String> {
    let r = if pretty {
        serde_json::to_string_pretty(value)
    } else {
        serde_json::to_string(value)
    };
    r.map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = to_json(path, value, true)?;
    s.push('\n');
    write_text(path, &s)
}

fn write_json_lines<T: Serialize>(path: &Path, values: &[T]) -> Result<()> {
    let mut s = String::new();
    for v in values {
        s.push_str(&to_json(path, v, false)?);
        s.push('\n');
    }
    write_text(path, &s)
}

fn load_db(path: &Path) -> Result<CrpDatabase> {
    let (db, errors) = CrpDatabase::load(path)?;
    if let Some(e) = errors.first() {
        return Err(Error::param(format!(
            "{} of {} responses unreadable, first: {}",
            errors.len(),
            db.len(),
            e.message
        )));
    }
    Ok(db)
}

fn load_enrolled(path: &Path) -> Result<CrpDatabase> {
    let db = load_db(path)?;
    if !db.is_enrolled() {
        return Err(Error::param(format!("{} is not enrolled", path.display())));
    }
    Ok(db)
}

fn limited(db: CrpDatabase, limit: Option<usize>) -> Result<CrpDatabase> {
    match limit {
        Some(n) if n < db.len() => db.prefix(n),
        Some(0) => Err(Error::param("limit must be at least 1")),
        _ => Ok(db),
    }
}

/// Features of the first `n` records: stored ones when enrolled with `p`, else extracted.
fn features_for(db: &CrpDatabase, n: usize, p: &SiftParams) -> Result<Vec<FeatureSet>> {
    if n == 0 || n > db.len() {
        return Err(Error::param(format!("requested {n} records from a database of {}", db.len())));
    }
    if db.is_enrolled() && db.manifest.sift.as_ref() == Some(p) {
        return Ok(db.features[..n].to_vec());
    }
    db.records[..n]
        .par_iter()
        .map(|r| detect_and_describe(&r.response, p))
        .collect()
}

/// Match-count matrix as CSV: header `id,<probe ids>`, one row per reference entry.
pub fn matrix_csv(row_ids: &[u32], col_ids: &[u32], counts: &[Vec<usize>]) -> String {
    let mut s = String::from("id");
    for c in col_ids {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    for (id, row) in row_ids.iter().zip(counts) {
        let _ = write!(s, "{id}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn robustness_csv(reports: &[RobustnessReport]) -> String {
    let mut s = String::from("transform,target,genuine_count,max_impostor,identified\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.transform.label(),
            r.target,
            r.genuine_count,
            r.max_impostor,
            r.identified
        );
    }
    s
}

#[derive(Serialize)]
struct MatrixSummary {
    md: f64,
    n: usize,
    min_diagonal: usize,
    max_off_diagonal: usize,
    mean_off_diagonal: f64,
    /// Every diagonal entry exceeds ten times every off-diagonal entry of its row.
    diagonal_dominant: bool,
}

fn summarize_matrix(md: f64, m: &[Vec<usize>]) -> MatrixSummary {
    let n = m.len();
    let mut min_diag = usize::MAX;
    let (mut max_off, mut sum_off, mut dominant) = (0, 0usize, true);
    for (i, row) in m.iter().enumerate() {
        min_diag = min_diag.min(row[i]);
        for (j, &v) in row.iter().enumerate() {
            if i != j {
                max_off = max_off.max(v);
                sum_off += v;
                dominant &= row[i] > 10 * v;
            }
        }
    }
    let pairs = n * n.saturating_sub(1);
    MatrixSummary {
        md,
        n,
        min_diagonal: min_diag,
        max_off_diagonal: max_off,
        mean_off_diagonal: if pairs > 0 { sum_off as f64 / pairs as f64 } else { 0.0 },
        diagonal_dominant: dominant,
    }
}

#[derive(Serialize)]
struct FhdReport {
    wavelength: f64,
    key_bits: usize,
    like: Option<Summary>,
    unlike: Option<Summary>,
    ideal_like: Option<Summary>,
    separated: bool,
}

#[derive(Serialize)]
struct BenchReport {
    entries: usize,
    probe_id: u32,
    best: u32,
    best_count: usize,
    per_entry_counts: Vec<(u32, usize)>,
}

pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    if cfg.threads == 0 {
        return Err(Error::param("threads must be at least 1"));
    }
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write_json(&cfg.out.join(RUN_FILE), cfg)?;
    with_threads(cfg.threads, || run_command(cfg))?
}

fn run_command(cfg: &RunConfig) -> Result<Outcome> {
    let out = cfg.out.as_path();
    let threads = cfg.threads;
    match &cfg.command {
        Command::Synth(c) => {
            let puf = make_puf(c.archetype, c.puf_seed);
            let t0 = build_dataset(&puf, c.n, &c.acquisition, c.dataset_seed)?;
            t0.save(out)?;
            let mut summary = format!("wrote {} responses to {}", t0.len(), out.display());
            if let Some((acq, dir)) = &c.t1 {
                let t1 = build_dataset(&puf, c.n, acq, c.dataset_seed)?;
                t1.save(dir)?;
                let _ = write!(summary, " and {}", dir.display());
            }
            Ok(Outcome::info(summary))
        }
        Command::Enroll(c) => {
            let (mut db, load_errors) = CrpDatabase::load(&c.db)?;
            let mut report = enroll(&mut db, &c.sift)?;
            for e in load_errors {
                if !report.errors.iter().any(|r| r.id == e.id) {
                    report.errors.push(e);
                }
            }
            db.save_features(&c.db)?;
            db.save_manifest(&c.db)?;
            write_json(&out.join("enroll.json"), &report)?;
            Ok(Outcome::info(format!(
                "enrolled {} of {} records ({} errors)",
                report.enrolled,
                db.len(),
                report.errors.len()
            )))
        }
        Command::Verify(c) => {
            let db = load_enrolled(&c.db)?;
            let probe = load_image(&c.probe)?;
            let d = verify(&probe, c.claimed_id, &db, &c.policy)?;
            write_json_lines(&out.join("decision.jsonl"), &[d])?;
            Ok(Outcome {
                decision: Some(d.accepted),
                summary: to_json(out, &d, false)?,
            })
        }
        Command::Identify(c) => {
            let db = limited(load_enrolled(&c.db)?, c.limit)?;
            let probe = load_image(&c.probe)?;
            let ident = identify(&probe, &db, &c.policy, threads)?;
            write_json_lines(&out.join("identify.jsonl"), &[&ident])?;
            let mut csv = String::from("id,count\n");
            for (id, count) in &ident.report.per_entry_counts {
                let _ = writeln!(csv, "{id},{count}");
            }
            write_text(&out.join("identify.csv"), &csv)?;
            Ok(Outcome {
                decision: Some(ident.in_database),
                summary: format!(
                    "in_database={} identified={:?} best={} best_count={}",
                    ident.in_database, ident.identified, ident.report.best, ident.report.best_count
                ),
            })
        }
        Command::Matrix(c) => {
            let reference = load_db(&c.db)?;
            let probe = match &c.probe_db {
                Some(p) => load_db(p)?,
                None => reference.clone(),
            };
            let rows = features_for(&reference, c.n, &c.sift)?;
            let cols = features_for(&probe, c.n, &c.sift)?;
            let row_ids: Vec<u32> = reference.records[..c.n].iter().map(|r| r.id).collect();
            let col_ids: Vec<u32> = probe.records[..c.n].iter().map(|r| r.id).collect();
            let mut summaries = Vec::new();
            for &md in &c.mds {
                let p = MatchParams {
                    cross_check: c.cross_check,
                    ..MatchParams::with_md(md)
                };
                // Rows are references: entry (i, j) matches probe j against reference i.
                let by_probe = match_matrix(&cols, &rows, &p)?;
                let counts: Vec<Vec<usize>> = (0..c.n).map(|i| (0..c.n).map(|j| by_probe[j][i]).collect()).collect();
                write_text(&out.join(format!("matrix_md{md:.2}.csv")), &matrix_csv(&row_ids, &col_ids, &counts))?;
                summaries.push(summarize_matrix(md, &counts));
            }
            write_json(&out.join("matrix_summary.json"), &summaries)?;
            Ok(Outcome::info(format!("wrote {} matrices of {}x{}", c.mds.len(), c.n, c.n)))
        }
        Command::Fhd(c) => {
            let t0 = load_db(&c.t0)?;
            let t1 = load_db(&c.t1)?;
            let aligned = t0.len() == t1.len()
                && t0.records.iter().zip(&t1.records).all(|(a, b)| a.challenge == b.challenge);
            if !aligned {
                return Err(Error::param("t0 and t1 databases do not share the same challenges"));
            }
            let params = match c.wavelength {
                Some(w) => GaborParams::with_wavelength(w),
                None => tuned_params(t0.records.iter().map(|r| &r.response))?,
            };
            let a: Vec<_> = t0.records.iter().map(|r| &r.response).collect();
            let b: Vec<_> = t1.records.iter().map(|r| &r.response).collect();
            let stats = fhd_stats(&a, &b, &params)?;
            write_text(&out.join("fhd_hist.csv"), &stats.histogram_csv(c.bins))?;
            let (like, unlike) = (stats.like_summary(), stats.unlike_summary());
            let report = FhdReport {
                wavelength: params.wavelength,
                key_bits: params.key_len(),
                like,
                unlike,
                ideal_like: stats.ideal_like_summary(),
                separated: matches!((like, unlike), (Some(l), Some(u)) if l.max < u.min),
            };
            write_json(&out.join("fhd_stats.json"), &report)?;
            Ok(Outcome::info(format!(
                "like mean {:.4}, unlike mean {:.4}",
                like.map_or(f64::NAN, |s| s.mean),
                unlike.map_or(f64::NAN, |s| s.mean)
            )))
        }
        Command::Rotate(c) => {
            let db = limited(load_enrolled(&c.db)?, Some(c.n))?;
            let reports = rotation_suite(&db, &c.angles, &c.policy, threads)?;
            write_text(&out.join("rotation.csv"), &robustness_csv(&reports))?;
            write_json_lines(&out.join("rotation.jsonl"), &reports)?;
            let ok = reports.iter().all(|r| r.identified);
            Ok(Outcome {
                decision: Some(ok),
                summary: format!("{} rotated probes, all identified: {ok}", reports.len()),
            })
        }
        Command::Transform(c) => {
            let db = limited(load_enrolled(&c.db)?, c.limit)?;
            let reports = transform_suite(c.target, &db, &c.transforms, &c.policy, threads)?;
            write_text(&out.join("transform.csv"), &robustness_csv(&reports))?;
            write_json_lines(&out.join("transform.jsonl"), &reports)?;
            let ok = reports.iter().all(|r| r.identified);
            Ok(Outcome {
                decision: Some(ok),
                summary: format!("{} transforms, all identified: {ok}", reports.len()),
            })
        }
        Command::Bench(c) => {
            let db = match &c.source {
                BenchSource::Path(p) => load_enrolled(p)?,
                BenchSource::Synth { archetype, n, seed } => {
                    let puf = make_puf(*archetype, *seed);
                    let mut db = build_dataset(&puf, *n, &AcquisitionParams::ideal(), *seed)?;
                    enroll(&mut db, &c.sift)?;
                    db
                }
            };
            let query = db
                .features_of(c.probe_id)
                .ok_or_else(|| Error::param(format!("unknown probe id {}", c.probe_id)))?;
            let entries = db.feature_entries()?;
            let (rows, report) = bench_search(query, &entries, &MatchParams::with_md(c.md), &c.thread_counts)?;
            let mut csv = String::from("threads,seconds_total,micros_per_comparison\n");
            for r in &rows {
                let _ = writeln!(csv, "{},{:.6},{:.3}", r.threads, r.seconds_total, r.micros_per_comparison);
            }
            write_text(&out.join("bench.csv"), &csv)?;
            write_json(
                &out.join("bench.json"),
                &BenchReport {
                    entries: entries.len(),
                    probe_id: c.probe_id,
                    best: report.best,
                    best_count: report.best_count,
                    per_entry_counts: report.per_entry_counts,
                },
            )?;
            Ok(Outcome::info(csv))
        }
    }
}
