//! Enrollment, verification and identification against a stored CRP database,
//! plus the rotation and transform robustness suites.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CrpDatabase, RecordError};
use crate::error::{Error, Result};
use crate::image::{apply_transform, Corner, GrayImage, Side, Transform};
use crate::matcher::{ratio_match, search_database, MatchParams, SearchReport};
use crate::sift::{detect_and_describe, FeatureSet, SiftParams};
use crate::speckle::Archetype;

pub const ROTATION_ANGLES: [f64; 6] = [0.0, 15.0, 30.0, 45.0, 60.0, 90.0];

/// The scale and crop edits of the identification study, identity first.
pub fn standard_transforms() -> Vec<Transform> {
    vec![
        Transform::Identity,
        Transform::Scale { factor: 1.5 },
        Transform::Scale { factor: 0.8 },
        Transform::CropFrame { fraction: 0.10 },
        Transform::CropCorner {
            fraction: 0.10,
            corner: Corner::TopLeft,
        },
        Transform::CropSide {
            fraction: 0.10,
            side: Side::Right,
        },
        Transform::CropCenter { fraction: 0.20 },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuthPolicy {
    /// Minimum number of matched features for acceptance.
    pub threshold: usize,
    pub md: f64,
}

impl Default for AuthPolicy {
    fn default() -> Self {
        AuthPolicy { threshold: 100, md: 0.7 }
    }
}

impl AuthPolicy {
    /// Threshold placed inside the genuine/impostor gap of each calibrated archetype.
    pub fn for_archetype(a: Archetype) -> Self {
        let threshold = match a {
            Archetype::Ps => 100,
            Archetype::Pdlc => 400,
            Archetype::Tio2 => 100,
        };
        AuthPolicy {
            threshold,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold == 0 {
            return Err(Error::param("threshold must be at least 1"));
        }
        self.match_params().validate()
    }

    pub fn match_params(&self) -> MatchParams {
        MatchParams::with_md(self.md)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthDecision {
    pub claimed_id: u32,
    pub match_count: usize,
    pub threshold: usize,
    pub accepted: bool,
    pub margin: i64,
}

impl AuthDecision {
    pub fn new(claimed_id: u32, match_count: usize, threshold: usize) -> Self {
        AuthDecision {
            claimed_id,
            match_count,
            threshold,
            accepted: match_count >= threshold,
            margin: match_count as i64 - threshold as i64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollReport {
    pub enrolled: usize,
    pub errors: Vec<RecordError>,
}

/// Extracts and stores features for every record. A record that fails keeps an
/// empty feature set and is listed in the report; the others are still enrolled.
pub fn enroll(db: &mut CrpDatabase, p: &SiftParams) -> Result<EnrollReport> {
    p.validate()?;
    if db.is_empty() {
        return Err(Error::param("cannot enroll an empty database"));
    }
    let results: Vec<Result<FeatureSet>> = db
        .records
        .par_iter()
        .map(|r| detect_and_describe(&r.response, p))
        .collect();
    let mut errors = Vec::new();
    let mut features = Vec::with_capacity(results.len());
    for (r, res) in db.records.iter().zip(results) {
        match res {
            Ok(fs) => features.push(fs),
            Err(e) => {
                errors.push(RecordError {
                    id: r.id,
                    message: e.to_string(),
                });
                features.push(FeatureSet::default());
            }
        }
    }
    db.manifest.sift = Some(*p);
    db.manifest.feature_counts = Some(features.iter().map(FeatureSet::len).collect());
    db.manifest.enroll_errors = errors.clone();
    db.features = features;
    Ok(EnrollReport {
        enrolled: db.len() - errors.len(),
        errors,
    })
}

fn enrolled_params(db: &CrpDatabase) -> Result<SiftParams> {
    match db.manifest.sift {
        Some(p) if db.is_enrolled() => Ok(p),
        _ => Err(Error::param("database is not enrolled")),
    }
}

/// Matches precomputed probe features against the claimed entry.
pub fn verify_features(query: &FeatureSet, claimed_id: u32, db: &CrpDatabase, policy: &AuthPolicy) -> Result<AuthDecision> {
    policy.validate()?;
    enrolled_params(db)?;
    let reference = db
        .features_of(claimed_id)
        .ok_or_else(|| Error::param(format!("unknown challenge id {claimed_id}")))?;
    let count = ratio_match(query, reference, &policy.match_params()).count;
    Ok(AuthDecision::new(claimed_id, count, policy.threshold))
}

pub fn verify(response: &GrayImage, claimed_id: u32, db: &CrpDatabase, policy: &AuthPolicy) -> Result<AuthDecision> {
    policy.validate()?;
    let sift = enrolled_params(db)?;
    if db.position(claimed_id).is_none() {
        return Err(Error::param(format!("unknown challenge id {claimed_id}")));
    }
    verify_features(&detect_and_describe(response, &sift)?, claimed_id, db, policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub report: SearchReport,
    /// True iff exactly one entry reaches the threshold.
    pub in_database: bool,
    pub identified: Option<u32>,
}

impl Identification {
    fn from_report(report: SearchReport) -> Self {
        let identified = match report.above_threshold.as_slice() {
            [only] => Some(*only),
            _ => None,
        };
        Identification {
            in_database: identified.is_some(),
            identified,
            report,
        }
    }
}

pub fn identify_features(query: &FeatureSet, db: &CrpDatabase, policy: &AuthPolicy, threads: usize) -> Result<Identification> {
    policy.validate()?;
    let entries = db.feature_entries()?;
    let report = search_database(query, &entries, &policy.match_params(), policy.threshold, threads)?;
    Ok(Identification::from_report(report))
}

pub fn identify(response: &GrayImage, db: &CrpDatabase, policy: &AuthPolicy, threads: usize) -> Result<Identification> {
    let sift = enrolled_params(db)?;
    identify_features(&detect_and_describe(response, &sift)?, db, policy, threads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub transform: Transform,
    pub target: u32,
    pub per_entry_counts: Vec<(u32, usize)>,
    pub genuine_count: usize,
    /// Highest count among non-target entries (0 when the target is the only entry).
    pub max_impostor: usize,
    /// Exactly one entry reaches the threshold and it is the target.
    pub identified: bool,
}

impl RobustnessReport {
    fn new(transform: Transform, target: u32, report: &SearchReport) -> Self {
        let genuine_count = report
            .per_entry_counts
            .iter()
            .find(|(id, _)| *id == target)
            .map_or(0, |(_, c)| *c);
        let max_impostor = report
            .per_entry_counts
            .iter()
            .filter(|(id, _)| *id != target)
            .map(|(_, c)| *c)
            .max()
            .unwrap_or(0);
        RobustnessReport {
            transform,
            target,
            per_entry_counts: report.per_entry_counts.clone(),
            genuine_count,
            max_impostor,
            identified: report.above_threshold == [target],
        }
    }
}

/// Applies `transform` to the stored response of `target` and searches the whole database.
pub fn robustness_probe(
    target: u32,
    transform: &Transform,
    db: &CrpDatabase,
    policy: &AuthPolicy,
    threads: usize,
) -> Result<RobustnessReport> {
    let sift = enrolled_params(db)?;
    let response = db
        .response(target)
        .ok_or_else(|| Error::param(format!("unknown challenge id {target}")))?;
    let edited = apply_transform(response, transform)?;
    let ident = identify_features(&detect_and_describe(&edited, &sift)?, db, policy, threads)?;
    Ok(RobustnessReport::new(*transform, target, &ident.report))
}

/// Every record rotated by every angle, each matched against all records of `db`.
/// Reports are ordered by angle, then by record.
pub fn rotation_suite(db: &CrpDatabase, angles: &[f64], policy: &AuthPolicy, threads: usize) -> Result<Vec<RobustnessReport>> {
    let mut out = Vec::with_capacity(angles.len() * db.len());
    for &degrees in angles {
        let t = Transform::Rotate { degrees };
        t.validate()?;
        for r in &db.records {
            out.push(robustness_probe(r.id, &t, db, policy, threads)?);
        }
    }
    Ok(out)
}

/// One target under each transform, searched against the full database.
pub fn transform_suite(
    target: u32,
    db: &CrpDatabase,
    transforms: &[Transform],
    policy: &AuthPolicy,
    threads: usize,
) -> Result<Vec<RobustnessReport>> {
    transforms
        .iter()
        .map(|t| robustness_probe(target, t, db, policy, threads))
        .collect()
}
