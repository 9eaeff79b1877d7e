//! Challenge/response databases and their directory layout.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/responses/0000.png ...
//! <dir>/features/0000.sft ...   (after enrollment)
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::io::{load_image, save_image};
use crate::sift::{read_features, write_features, FeatureSet, SiftParams};
use crate::speckle::{build_records, challenge_for, AcquisitionParams, Archetype, ChallengeSpec, CrpRecord, PufModel};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESPONSES_DIR: &str = "responses";
pub const FEATURES_DIR: &str = "features";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    pub id: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub archetype: Archetype,
    pub puf_seed: u64,
    pub dataset_seed: u64,
    pub n: usize,
    pub acquisition: AcquisitionParams,
    pub challenge_rows: usize,
    pub challenge_cols: usize,
    pub fill: f64,
    /// Wall-clock creation time (RFC 3339); informational only.
    pub created: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sift: Option<SiftParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_counts: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub enroll_errors: Vec<RecordError>,
}

/// Records `0..n` of one PUF, optionally with enrolled features.
#[derive(Debug, Clone)]
pub struct CrpDatabase {
    pub manifest: Manifest,
    pub records: Vec<CrpRecord>,
    /// One feature set per record once enrolled, empty otherwise.
    pub features: Vec<FeatureSet>,
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn response_path(dir: &Path, id: u32) -> PathBuf {
    dir.join(RESPONSES_DIR).join(format!("{id:04}.png"))
}

pub fn features_path(dir: &Path, id: u32) -> PathBuf {
    dir.join(FEATURES_DIR).join(format!("{id:04}.sft"))
}

/// Synthesizes `n` records. Calling again with only `acq.seed` changed gives the
/// re-acquired ("t1") dataset for the same challenges.
pub fn build_dataset(puf: &PufModel, n: usize, acq: &AcquisitionParams, seed: u64) -> Result<CrpDatabase> {
    if n == 0 {
        return Err(Error::param("dataset must contain at least one record"));
    }
    let n32 = u32::try_from(n).map_err(|_| Error::param(format!("too many records: {n}")))?;
    let records = build_records(puf, 0..n32, acq, seed)?;
    let probe = challenge_for(seed, 0);
    Ok(CrpDatabase {
        manifest: Manifest {
            archetype: puf.archetype,
            puf_seed: puf.seed,
            dataset_seed: seed,
            n,
            acquisition: *acq,
            challenge_rows: probe.rows,
            challenge_cols: probe.cols,
            fill: probe.fill,
            created: now_rfc3339(),
            sift: None,
            feature_counts: None,
            enroll_errors: Vec::new(),
        },
        records,
        features: Vec::new(),
    })
}

impl CrpDatabase {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_enrolled(&self) -> bool {
        self.manifest.sift.is_some() && self.features.len() == self.records.len()
    }

    pub fn position(&self, id: u32) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }

    pub fn challenge(&self, id: u32) -> Option<&ChallengeSpec> {
        self.position(id).map(|i| &self.records[i].challenge)
    }

    pub fn response(&self, id: u32) -> Option<&GrayImage> {
        self.position(id).map(|i| &self.records[i].response)
    }

    pub fn features_of(&self, id: u32) -> Option<&FeatureSet> {
        self.position(id).and_then(|i| self.features.get(i))
    }

    /// The first `n` records (and their features, if enrolled).
    pub fn prefix(&self, n: usize) -> Result<CrpDatabase> {
        if n == 0 || n > self.len() {
            return Err(Error::param(format!("prefix of {n} records from a database of {}", self.len())));
        }
        let mut manifest = self.manifest.clone();
        manifest.n = n;
        if let Some(c) = manifest.feature_counts.as_mut() {
            c.truncate(n);
        }
        manifest.enroll_errors.retain(|e| (e.id as usize) < n);
        Ok(CrpDatabase {
            manifest,
            records: self.records[..n].to_vec(),
            features: self.features.iter().take(n).cloned().collect(),
        })
    }

    /// `(id, features)` pairs for database search.
    pub fn feature_entries(&self) -> Result<Vec<(u32, &FeatureSet)>> {
        if !self.is_enrolled() {
            return Err(Error::param("database is not enrolled"));
        }
        Ok(self.records.iter().map(|r| r.id).zip(self.features.iter()).collect())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let responses = dir.join(RESPONSES_DIR);
        fs::create_dir_all(&responses).map_err(|e| Error::io(&responses, e))?;
        for r in &self.records {
            save_image(&r.response, response_path(dir, r.id))?;
        }
        if self.is_enrolled() {
            self.save_features(dir)?;
        }
        self.save_manifest(dir)
    }

    pub fn save_manifest(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn save_features(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let params = self
            .manifest
            .sift
            .ok_or_else(|| Error::param("database is not enrolled"))?;
        let fdir = dir.join(FEATURES_DIR);
        fs::create_dir_all(&fdir).map_err(|e| Error::io(&fdir, e))?;
        for (r, fs_) in self.records.iter().zip(&self.features) {
            let path = features_path(dir, r.id);
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_features(&mut BufWriter::new(file), fs_, &params).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Loads a database directory. Unreadable response images do not abort the load:
    /// they are replaced by an empty image and reported per record.
    pub fn load(dir: impl AsRef<Path>) -> Result<(CrpDatabase, Vec<RecordError>)> {
        let dir = dir.as_ref();
        let mpath = dir.join(MANIFEST_FILE);
        let file = File::open(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Json {
            path: mpath.clone(),
            source: e,
        })?;
        if manifest.n == 0 {
            return Err(Error::param(format!("{}: database is empty", mpath.display())));
        }
        let mut errors = Vec::new();
        let mut records = Vec::with_capacity(manifest.n);
        for id in 0..manifest.n as u32 {
            let mut challenge = challenge_for(manifest.dataset_seed, id);
            challenge.rows = manifest.challenge_rows;
            challenge.cols = manifest.challenge_cols;
            challenge.fill = manifest.fill;
            let response = match load_image(response_path(dir, id)) {
                Ok(img) => img,
                Err(e) => {
                    errors.push(RecordError {
                        id,
                        message: e.to_string(),
                    });
                    GrayImage::new(0, 0)
                }
            };
            records.push(CrpRecord {
                id,
                challenge,
                response,
            });
        }
        let mut features = Vec::new();
        if manifest.sift.is_some() {
            for r in &records {
                let path = features_path(dir, r.id);
                let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
                let (fs_, _) = read_features(&mut BufReader::new(file))
                    .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
                features.push(fs_);
            }
        }
        Ok((
            CrpDatabase {
                manifest,
                records,
                features,
            },
            errors,
        ))
    }
}
