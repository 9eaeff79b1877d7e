//! Ratio-test descriptor matching, match matrices and parallel one-vs-database search.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sift::{FeatureSet, DESCRIPTOR_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    /// Ratio-test threshold: accept when `d1 < md * d2`.
    pub md: f64,
    /// Also require the `b` feature's nearest neighbour in `a` to be the matched feature.
    pub cross_check: bool,
    /// Keep at most one `a` feature per `b` feature (the closest).
    pub one_to_one: bool,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            md: 0.7,
            cross_check: false,
            one_to_one: true,
        }
    }
}

impl MatchParams {
    pub fn with_md(md: f64) -> Self {
        MatchParams {
            md,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.md > 0.0 && self.md <= 1.0 {
            Ok(())
        } else {
            Err(Error::param(format!("md must lie in (0, 1], got {}", self.md)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Ordered by `index_a`.
    pub pairs: Vec<MatchPair>,
    pub count: usize,
}

/// Nearest and second-nearest neighbour of one query descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoNearest {
    pub first: usize,
    pub d1: f64,
    pub d2: f64,
}

/// Exact Euclidean distance in double precision.
pub fn descriptor_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Dot products of every `a` descriptor with every `b` descriptor, row-major `a.len() x b.len()`.
fn dot_matrix(a: &FeatureSet, b: &FeatureSet) -> Vec<f32> {
    let (n, m) = (a.len(), b.len());
    let mut c = vec![0f32; n * m];
    if n == 0 || m == 0 {
        return c;
    }
    // SAFETY: strides describe the row-major buffers exactly: a is n x 128,
    // b^T is read as 128 x m from b's m x 128 storage, c is n x m.
    unsafe {
        matrixmultiply::sgemm(
            n,
            DESCRIPTOR_LEN,
            m,
            1.0,
            a.descriptors.as_ptr(),
            DESCRIPTOR_LEN as isize,
            1,
            b.descriptors.as_ptr(),
            1,
            DESCRIPTOR_LEN as isize,
            0.0,
            c.as_mut_ptr(),
            m as isize,
            1,
        );
    }
    c
}

const CANDIDATES: usize = 3;

/// Two nearest neighbours in `b` for every descriptor of `a`.
///
/// Candidates are shortlisted by dot product (descriptors are unit length), then
/// re-scored with exact distances. Ties go to the lower index. `None` when `b`
/// has fewer than two features.
fn two_nearest_from_dots(a: &FeatureSet, b: &FeatureSet, dots: &[f32]) -> Vec<Option<TwoNearest>> {
    let m = b.len();
    (0..a.len())
        .map(|i| {
            if m < 2 {
                return None;
            }
            let row = &dots[i * m..(i + 1) * m];
            let mut top: [(f32, usize); CANDIDATES] = [(f32::NEG_INFINITY, usize::MAX); CANDIDATES];
            for (j, &v) in row.iter().enumerate() {
                if v > top[CANDIDATES - 1].0 {
                    let mut k = CANDIDATES - 1;
                    while k > 0 && v > top[k - 1].0 {
                        top[k] = top[k - 1];
                        k -= 1;
                    }
                    top[k] = (v, j);
                }
            }
            let qa = a.descriptor(i);
            let mut exact: Vec<(f64, usize)> = top
                .iter()
                .filter(|(_, j)| *j != usize::MAX)
                .map(|&(_, j)| (descriptor_distance(qa, b.descriptor(j)), j))
                .collect();
            exact.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            Some(TwoNearest {
                first: exact[0].1,
                d1: exact[0].0,
                d2: exact[1].0,
            })
        })
        .collect()
}

pub fn two_nearest(a: &FeatureSet, b: &FeatureSet) -> Vec<Option<TwoNearest>> {
    two_nearest_from_dots(a, b, &dot_matrix(a, b))
}

/// Ratio-test matching of `a` against `b`.
pub fn ratio_match(a: &FeatureSet, b: &FeatureSet, p: &MatchParams) -> MatchResult {
    if a.is_empty() || b.len() < 2 {
        return MatchResult::default();
    }
    let dots = dot_matrix(a, b);
    let nn = two_nearest_from_dots(a, b, &dots);
    let m = b.len();

    let mut accepted: Vec<MatchPair> = nn
        .iter()
        .enumerate()
        .filter_map(|(i, t)| {
            let t = t.as_ref()?;
            (t.d1 < p.md * t.d2).then_some(MatchPair {
                index_a: i,
                index_b: t.first,
                distance: t.d1,
            })
        })
        .collect();

    if p.cross_check {
        // Best a for each b column, by dot product; ties to the lower index.
        let mut col_best = vec![(f32::NEG_INFINITY, usize::MAX); m];
        for i in 0..a.len() {
            for (j, &v) in dots[i * m..(i + 1) * m].iter().enumerate() {
                if v > col_best[j].0 {
                    col_best[j] = (v, i);
                }
            }
        }
        accepted.retain(|pair| col_best[pair.index_b].1 == pair.index_a);
    }

    if p.one_to_one {
        let mut owner: Vec<Option<usize>> = vec![None; m];
        for (k, pair) in accepted.iter().enumerate() {
            let slot = &mut owner[pair.index_b];
            match slot {
                Some(prev) if accepted[*prev].distance <= pair.distance => {}
                _ => *slot = Some(k),
            }
        }
        let keep: Vec<bool> = (0..accepted.len())
            .map(|k| owner[accepted[k].index_b] == Some(k))
            .collect();
        let mut k = 0;
        accepted.retain(|_| {
            let r = keep[k];
            k += 1;
            r
        });
    }

    MatchResult {
        count: accepted.len(),
        pairs: accepted,
    }
}

/// `counts[i][j] = ratio_match(set_a[i], set_b[j]).count`, computed in parallel.
pub fn match_matrix(set_a: &[FeatureSet], set_b: &[FeatureSet], p: &MatchParams) -> Result<Vec<Vec<usize>>> {
    p.validate()?;
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::param("match_matrix needs non-empty sets"));
    }
    let m = set_b.len();
    let flat: Vec<usize> = (0..set_a.len() * m)
        .into_par_iter()
        .map(|k| ratio_match(&set_a[k / m], &set_b[k % m], p).count)
        .collect();
    Ok(flat.chunks(m).map(|r| r.to_vec()).collect())
}

/// Runs `f` on a dedicated pool of exactly `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Err(Error::param("thread count must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::param(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub per_entry_counts: Vec<(u32, usize)>,
    /// Entry with the highest count; ties go to the lowest id.
    pub best: u32,
    pub best_count: usize,
    pub threshold: usize,
    pub above_threshold: Vec<u32>,
    #[serde(skip)]
    pub elapsed: Duration,
}

/// Matches `query` against every database entry using up to `threads` workers.
pub fn search_database(
    query: &FeatureSet,
    db: &[(u32, &FeatureSet)],
    p: &MatchParams,
    threshold: usize,
    threads: usize,
) -> Result<SearchReport> {
    p.validate()?;
    if db.is_empty() {
        return Err(Error::param("search database is empty"));
    }
    let start = Instant::now();
    let counts: Vec<usize> = with_threads(threads, || {
        db.par_iter()
            .map(|(_, fs)| ratio_match(query, fs, p).count)
            .collect()
    })?;
    let elapsed = start.elapsed();

    let per_entry_counts: Vec<(u32, usize)> = db.iter().map(|(id, _)| *id).zip(counts).collect();
    let (best, best_count) = per_entry_counts
        .iter()
        .copied()
        .fold((u32::MAX, 0usize), |acc, (id, c)| {
            if acc.0 == u32::MAX || c > acc.1 || (c == acc.1 && id < acc.0) {
                (id, c)
            } else {
                acc
            }
        });
    let above_threshold = per_entry_counts
        .iter()
        .filter(|(_, c)| *c >= threshold)
        .map(|(id, _)| *id)
        .collect();
    Ok(SearchReport {
        per_entry_counts,
        best,
        best_count,
        threshold,
        above_threshold,
        elapsed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub threads: usize,
    pub seconds_total: f64,
    pub micros_per_comparison: f64,
}

/// Times a one-vs-database search for each thread count. Every run must produce
/// the same per-entry counts; a mismatch is reported as an error.
pub fn bench_search(
    query: &FeatureSet,
    db: &[(u32, &FeatureSet)],
    p: &MatchParams,
    threads: &[usize],
) -> Result<(Vec<BenchRow>, SearchReport)> {
    if db.is_empty() {
        return Err(Error::param("benchmark database is empty"));
    }
    if threads.is_empty() {
        return Err(Error::param("no thread counts to benchmark"));
    }
    let mut rows = Vec::with_capacity(threads.len());
    let mut reference: Option<SearchReport> = None;
    for &t in threads {
        let report = search_database(query, db, p, usize::MAX, t)?;
        let secs = report.elapsed.as_secs_f64();
        rows.push(BenchRow {
            threads: t,
            seconds_total: secs,
            micros_per_comparison: secs * 1e6 / db.len() as f64,
        });
        match &reference {
            None => reference = Some(report),
            Some(r) if r.per_entry_counts != report.per_entry_counts => {
                return Err(Error::param(format!(
                    "search with {t} threads disagrees with the first run"
                )));
            }
            Some(_) => {}
        }
    }
    Ok((rows, reference.unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sift::Keypoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kp() -> Keypoint {
        Keypoint {
            x: 0.0,
            y: 0.0,
            octave: 0,
            layer: 1,
            scale: 1.6,
            orientation: 0.0,
            response: 0.1,
            layer_offset: 0.0,
        }
    }

    fn unit(v: &mut [f32]) {
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
    }

    pub(crate) fn random_set(n: usize, seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fs = FeatureSet::default();
        for _ in 0..n {
            let mut d: Vec<f32> = (0..DESCRIPTOR_LEN).map(|_| rng.random::<f32>()).collect();
            unit(&mut d);
            fs.push(kp(), &d);
        }
        fs
    }

    /// Perturbed copy of `src`, features shuffled so indices differ.
    fn noisy_copy(src: &FeatureSet, noise: f32, seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..src.len()).collect();
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let mut fs = FeatureSet::default();
        for i in idx {
            let mut d: Vec<f32> = src
                .descriptor(i)
                .iter()
                .map(|&v| (v + noise * (rng.random::<f32>() - 0.5)).max(0.0))
                .collect();
            unit(&mut d);
            fs.push(kp(), &d);
        }
        fs
    }

    /// Brute force over every pair in double precision.
    fn oracle(a: &FeatureSet, b: &FeatureSet, md: f64) -> Vec<(usize, usize, f64)> {
        let mut acc = Vec::new();
        for i in 0..a.len() {
            let mut d: Vec<(f64, usize)> = (0..b.len())
                .map(|j| {
                    let s: f64 = a
                        .descriptor(i)
                        .iter()
                        .zip(b.descriptor(j))
                        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                        .sum();
                    (s.sqrt(), j)
                })
                .collect();
            d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            if d.len() >= 2 && d[0].0 < md * d[1].0 {
                acc.push((i, d[0].1, d[0].0));
            }
        }
        // One-to-one: closest a per b, lower a on ties.
        acc.iter()
            .copied()
            .filter(|&(i, j, dist)| {
                !acc.iter()
                    .any(|&(i2, j2, d2)| j2 == j && (d2 < dist || (d2 == dist && i2 < i)))
            })
            .collect()
    }

    #[test]
    fn production_path_equals_brute_force() {
        for (n, m, seed) in [(200usize, 180usize, 1u64), (50, 200, 2), (120, 120, 3)] {
            let a = random_set(n, seed);
            let b = {
                let mut b = noisy_copy(&a, 0.08, seed + 100);
                let extra = random_set(m.saturating_sub(n), seed + 200);
                for (k, d) in extra.iter() {
                    b.push(*k, d);
                }
                b
            };
            for md in [0.5, 0.7, 0.9] {
                let got = ratio_match(&a, &b, &MatchParams::with_md(md));
                let want = oracle(&a, &b, md);
                let got: Vec<_> = got.pairs.iter().map(|p| (p.index_a, p.index_b, p.distance)).collect();
                assert_eq!(got, want, "n={n} m={m} md={md}");
            }
        }
    }

    #[test]
    fn self_match_finds_nearly_everything() {
        let f = random_set(300, 7);
        let r = ratio_match(&f, &f, &MatchParams::default());
        assert!(r.count as f64 >= 0.95 * 300.0);
        assert_eq!(r.count, r.pairs.len());
    }

    #[test]
    fn empty_inputs() {
        let f = random_set(10, 8);
        let e = FeatureSet::default();
        let p = MatchParams::default();
        assert_eq!(ratio_match(&e, &f, &p).count, 0);
        assert_eq!(ratio_match(&f, &e, &p).count, 0);
        assert_eq!(ratio_match(&e, &e, &p).count, 0);
    }

    #[test]
    fn md_monotone_and_one_to_one() {
        let a = random_set(150, 9);
        let b = noisy_copy(&a, 0.3, 10);
        let c: Vec<usize> = [0.5, 0.7, 0.9]
            .iter()
            .map(|&md| ratio_match(&a, &b, &MatchParams::with_md(md)).count)
            .collect();
        assert!(c[0] <= c[1] && c[1] <= c[2], "{c:?}");
        let r = ratio_match(&a, &b, &MatchParams::with_md(0.9));
        let mut seen = std::collections::HashSet::new();
        assert!(r.pairs.iter().all(|p| seen.insert(p.index_b)));
        assert!(r.pairs.windows(2).all(|w| w[0].index_a < w[1].index_a));
    }

    #[test]
    fn cross_check_is_a_subset() {
        let a = random_set(100, 11);
        let b = noisy_copy(&a, 0.2, 12);
        let plain = ratio_match(&a, &b, &MatchParams::default());
        let cc = ratio_match(
            &a,
            &b,
            &MatchParams {
                cross_check: true,
                ..Default::default()
            },
        );
        assert!(cc.count <= plain.count);
        assert!(cc.pairs.iter().all(|p| plain.pairs.contains(p)));
    }

    #[test]
    fn invalid_md_rejected() {
        assert!(MatchParams::with_md(0.0).validate().is_err());
        assert!(MatchParams::with_md(1.2).validate().is_err());
        assert!(MatchParams::with_md(1.0).validate().is_ok());
    }

    #[test]
    fn one_by_one_matrix_is_ratio_match() {
        let a = random_set(40, 13);
        let b = noisy_copy(&a, 0.1, 14);
        let p = MatchParams::default();
        let m = match_matrix(&[a.clone()], &[b.clone()], &p).unwrap();
        assert_eq!(m, vec![vec![ratio_match(&a, &b, &p).count]]);
        assert!(match_matrix(&[], &[b], &p).is_err());
    }

    #[test]
    fn search_is_thread_invariant_and_picks_target() {
        let sets: Vec<FeatureSet> = (0..12).map(|i| random_set(60, 100 + i)).collect();
        let query = noisy_copy(&sets[5], 0.05, 99);
        let db: Vec<(u32, &FeatureSet)> = sets.iter().enumerate().map(|(i, s)| (i as u32, s)).collect();
        let p = MatchParams::default();
        let r1 = search_database(&query, &db, &p, 30, 1).unwrap();
        let r4 = search_database(&query, &db, &p, 30, 4).unwrap();
        assert_eq!(r1.per_entry_counts, r4.per_entry_counts);
        assert_eq!(r1.best, 5);
        assert_eq!(r1.above_threshold, vec![5]);
        assert_eq!(r4.above_threshold, vec![5]);
        assert!(search_database(&query, &[], &p, 30, 1).is_err());
        assert!(search_database(&query, &db, &p, 30, 0).is_err());
    }

    #[test]
    fn best_ties_go_to_lowest_id() {
        let empty = FeatureSet::default();
        let q = random_set(5, 1);
        let db = vec![(7u32, &empty), (3u32, &empty), (9u32, &empty)];
        let r = search_database(&q, &db, &MatchParams::default(), 1, 1).unwrap();
        assert_eq!(r.best, 3);
        assert!(r.above_threshold.is_empty());
    }

    #[test]
    fn bench_rows_and_errors() {
        let sets: Vec<FeatureSet> = (0..6).map(|i| random_set(30, 200 + i)).collect();
        let db: Vec<(u32, &FeatureSet)> = sets.iter().enumerate().map(|(i, s)| (i as u32, s)).collect();
        let (rows, report) = bench_search(&sets[0], &db, &MatchParams::default(), &[1, 1, 2]).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.seconds_total >= 0.0));
        assert_eq!(report.best, 0);
        assert!(bench_search(&sets[0], &[], &MatchParams::default(), &[1]).is_err());
    }
}
