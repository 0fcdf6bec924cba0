//! Local-geometry + RCS histogram descriptors and their matching.
//!
//! Keypoints are the K highest-RCS points of each angular interval cell.
//! Each keypoint is described by a 2D histogram binning the distances and
//! RCS values of its nearest keypoint neighbors. Descriptors are compared
//! with a neighborhood-expanded histogram intersection: a bin may match a
//! nearby bin, discounted by 1/(1 + Manhattan distance). Candidate pairs are
//! pre-screened by RCS difference and verified by RANSAC over a rigid
//! 3-point model.

use nalgebra::Vector3;
use rand::Rng;
use thiserror::Error;

use crate::geom::{umeyama_align, Pose};
use crate::preprocess::{IntervalGrid, RadarScan};
use crate::spatial::KdTree;

#[derive(Debug, Error, PartialEq)]
pub enum LgcError {
    #[error("scan has no points to extract keypoints from")]
    EmptyScan,
    #[error("keypoint cloud has a single point, no neighbors to describe")]
    SinglePointCloud,
    #[error("histogram bin configurations differ")]
    BinConfigMismatch,
}

/// Bin layout shared by all histograms of a radar profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramConfig {
    pub distance_bins: usize,
    pub rcs_bins: usize,
    /// m
    pub distance_bin_width: f64,
    /// dBsm
    pub rcs_bin_width: f64,
    /// dBsm value mapping to RCS bin 0
    pub rcs_origin: f64,
}

impl HistogramConfig {
    /// ARS548-style layout: 0.2 m × 1 dBsm bins, 100 × 50 of them.
    pub fn ars548() -> Self {
        Self {
            distance_bins: 100,
            rcs_bins: 50,
            distance_bin_width: 0.2,
            rcs_bin_width: 1.0,
            rcs_origin: 0.0,
        }
    }

    /// EAGLE-G7-style layout: 0.1 m × 0.01 dBsm bins, 100 × 100 of them.
    pub fn eagle_g7() -> Self {
        Self {
            distance_bins: 100,
            rcs_bins: 100,
            distance_bin_width: 0.1,
            rcs_bin_width: 0.01,
            rcs_origin: 0.0,
        }
    }
}

/// 2D distance × RCS neighbor histogram of one keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LgcHistogram {
    pub config: HistogramConfig,
    /// Row-major `[distance][rcs]` counts.
    bins: Vec<u32>,
    /// Index of the described keypoint within its cloud.
    pub owner: usize,
    pub owner_rcs: f64,
    /// Features that fell outside the bin range and were clamped to an edge.
    pub clamped: u32,
}

impl LgcHistogram {
    fn zeros(config: HistogramConfig, owner: usize, owner_rcs: f64) -> Self {
        Self {
            config,
            bins: vec![0; config.distance_bins * config.rcs_bins],
            owner,
            owner_rcs,
            clamped: 0,
        }
    }

    pub fn count(&self, distance_bin: usize, rcs_bin: usize) -> u32 {
        self.bins[distance_bin * self.config.rcs_bins + rcs_bin]
    }

    fn add(&mut self, distance_bin: usize, rcs_bin: usize) {
        self.bins[distance_bin * self.config.rcs_bins + rcs_bin] += 1;
    }

    /// Total neighbor count the histogram was built from.
    pub fn total(&self) -> u32 {
        self.bins.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.iter().all(|&c| c == 0)
    }

    /// Nonzero bins as (distance index, rcs index, count), row-major order.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        self.bins.iter().enumerate().filter_map(|(i, &c)| {
            (c > 0).then(|| (i / self.config.rcs_bins, i % self.config.rcs_bins, c))
        })
    }
}

/// One selected keypoint: its index in the source scan, position, and RCS.
#[derive(Debug, Clone, Copy)]
pub struct Keypoint {
    pub scan_index: usize,
    pub position: Vector3<f64>,
    pub rcs: f64,
}

/// Keypoints of one scan plus their descriptors (parallel vectors).
#[derive(Debug, Clone, Default)]
pub struct KeypointCloud {
    pub points: Vec<Keypoint>,
    pub histograms: Vec<LgcHistogram>,
}

impl KeypointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|k| k.position).collect()
    }
}

/// The K highest-RCS points of each interval cell, ties broken toward the
/// lower scan index. Output is ordered by scan index.
pub fn extract_keypoints(
    scan: &RadarScan,
    grid: &IntervalGrid,
    k_per_cell: usize,
) -> Result<KeypointCloud, LgcError> {
    if scan.is_empty() {
        return Err(LgcError::EmptyScan);
    }
    let mut cells: std::collections::BTreeMap<(usize, usize), Vec<usize>> =
        std::collections::BTreeMap::new();
    for (i, cell) in grid.assignment.iter().enumerate() {
        cells.entry(*cell).or_default().push(i);
    }

    let mut selected = Vec::new();
    for indices in cells.values() {
        let mut ranked = indices.clone();
        ranked.sort_by(|&a, &b| {
            scan.points[b]
                .rcs
                .partial_cmp(&scan.points[a].rcs)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        selected.extend(ranked.into_iter().take(k_per_cell));
    }
    selected.sort_unstable();

    let points = selected
        .into_iter()
        .map(|i| Keypoint {
            scan_index: i,
            position: scan.points[i].position,
            rcs: scan.points[i].rcs,
        })
        .collect();
    Ok(KeypointCloud {
        points,
        histograms: Vec::new(),
    })
}

/// Histogram of one keypoint over its `k_neighbors` nearest neighbors in the
/// keypoint cloud. Out-of-range features clamp to edge bins so the total
/// count always equals the number of neighbors used.
pub fn build_histogram(
    cloud: &KeypointCloud,
    tree: &KdTree,
    index: usize,
    k_neighbors: usize,
    config: HistogramConfig,
) -> Result<LgcHistogram, LgcError> {
    let keypoint = &cloud.points[index];
    let mut hist = LgcHistogram::zeros(config, index, keypoint.rcs);
    if cloud.len() < 2 {
        return Err(LgcError::SinglePointCloud);
    }

    for neighbor in tree.knn(&keypoint.position, k_neighbors, Some(index)) {
        let other = &cloud.points[neighbor];
        let distance = (keypoint.position - other.position).norm();

        let d_raw = (distance / config.distance_bin_width).floor();
        let r_raw = ((other.rcs - config.rcs_origin) / config.rcs_bin_width).floor();
        let d_bin = d_raw.max(0.0).min((config.distance_bins - 1) as f64) as usize;
        let r_bin = r_raw.max(0.0).min((config.rcs_bins - 1) as f64) as usize;
        if d_raw < 0.0
            || d_raw >= config.distance_bins as f64
            || r_raw < 0.0
            || r_raw >= config.rcs_bins as f64
        {
            hist.clamped += 1;
        }
        hist.add(d_bin, r_bin);
    }
    Ok(hist)
}

/// Fills descriptors for every keypoint; a single-point cloud gets one empty
/// flagged histogram.
pub fn build_histograms(cloud: &mut KeypointCloud, k_neighbors: usize, config: HistogramConfig) {
    let tree = KdTree::build(&cloud.positions());
    cloud.histograms = (0..cloud.len())
        .map(|i| {
            build_histogram(cloud, &tree, i, k_neighbors, config)
                .unwrap_or_else(|_| LgcHistogram::zeros(config, i, cloud.points[i].rcs))
        })
        .collect();
}

/// Neighborhood-expanded histogram intersection.
///
/// Every nonzero bin of `a` contributes the best weighted intersection
/// `min(A_ij, B_xy) / (1 + |x-i| + |y-j|)` over nonzero bins of `b` within
/// Chebyshev radius `radius`; no candidate means zero contribution. Ties
/// prefer the smaller Manhattan distance, then row-major order.
pub fn nhi_similarity(
    a: &LgcHistogram,
    b: &LgcHistogram,
    radius: usize,
) -> Result<f64, LgcError> {
    if a.config != b.config {
        return Err(LgcError::BinConfigMismatch);
    }
    let r = radius as isize;
    let mut total = 0.0;
    for (i, j, count_a) in a.nonzero() {
        let mut best: Option<(f64, usize, (usize, usize))> = None;
        for x in (i as isize - r).max(0)..=(i as isize + r).min(b.config.distance_bins as isize - 1)
        {
            for y in
                (j as isize - r).max(0)..=(j as isize + r).min(b.config.rcs_bins as isize - 1)
            {
                let (x, y) = (x as usize, y as usize);
                let count_b = b.count(x, y);
                if count_b == 0 {
                    continue;
                }
                let manhattan = x.abs_diff(i) + y.abs_diff(j);
                let value =
                    count_a.min(count_b) as f64 / (1.0 + manhattan as f64);
                let candidate = (value, manhattan, (x, y));
                let better = match &best {
                    None => true,
                    Some((bv, bm, bxy)) => {
                        value > *bv
                            || (value == *bv && manhattan < *bm)
                            || (value == *bv && manhattan == *bm && (x, y) < *bxy)
                    }
                };
                if better {
                    best = Some(candidate);
                }
            }
        }
        if let Some((value, _, _)) = best {
            total += value;
        }
    }
    Ok(total)
}

/// A candidate or verified keypoint match between two clouds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub index_a: usize,
    pub index_b: usize,
    pub similarity: f64,
    pub inlier: bool,
}

/// Matching parameters; defaults follow the ARS548 profile.
#[derive(Debug, Clone, Copy)]
pub struct MatchParams {
    /// Max |RCS difference| for a pair to be considered at all (dBsm).
    pub rcs_screen: f64,
    /// Min NHI similarity for acceptance.
    pub nhi_threshold: f64,
    /// NHI neighborhood radius (bins).
    pub nhi_radius: usize,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            rcs_screen: 3.0,
            nhi_threshold: 5.0,
            nhi_radius: 1,
        }
    }
}

/// One-to-one keypoint matches: RCS pre-screen, NHI argmax, acceptance
/// threshold, and mutual-best filtering. Output is ordered by `index_a`.
///
/// The intersection score saturates at the histogram mass, so exact ties
/// happen; they break toward the smaller |RCS difference| (the pre-screen's
/// own invariance assumption), then toward the lower index.
pub fn match_keypoints(
    a: &KeypointCloud,
    b: &KeypointCloud,
    params: &MatchParams,
) -> Vec<Correspondence> {
    let rcs_gap =
        |ia: usize, ib: usize| (a.points[ia].rcs - b.points[ib].rcs).abs();
    let similarity = |ia: usize, ib: usize| {
        nhi_similarity(&a.histograms[ia], &b.histograms[ib], params.nhi_radius)
            .expect("clouds matched with differing bin configs")
    };
    // (candidate, similarity, rcs gap); scanning in ascending index order
    // makes "strictly better" implement the documented tie-break.
    let better = |s: f64, gap: f64, best: &Option<(usize, f64, f64)>| match best {
        None => true,
        Some((_, bs, bgap)) => s > *bs || (s == *bs && gap < *bgap),
    };

    let mut best_for_a: Vec<Option<(usize, f64, f64)>> = vec![None; a.len()];
    let mut best_for_b: Vec<Option<(usize, f64, f64)>> = vec![None; b.len()];
    for ia in 0..a.len() {
        for ib in 0..b.len() {
            let gap = rcs_gap(ia, ib);
            if gap > params.rcs_screen {
                continue;
            }
            let s = similarity(ia, ib);
            if better(s, gap, &best_for_a[ia]) {
                best_for_a[ia] = Some((ib, s, gap));
            }
            if better(s, gap, &best_for_b[ib]) {
                best_for_b[ib] = Some((ia, s, gap));
            }
        }
    }

    (0..a.len())
        .filter_map(|ia| {
            let (ib, s, _) = best_for_a[ia]?;
            if s < params.nhi_threshold {
                return None;
            }
            match best_for_b[ib] {
                Some((back, _, _)) if back == ia => Some(Correspondence {
                    index_a: ia,
                    index_b: ib,
                    similarity: s,
                    inlier: false,
                }),
                _ => None,
            }
        })
        .collect()
}

/// Result of RANSAC verification. `verified` is false when fewer than 3
/// matches were available and the input passed through unfiltered.
#[derive(Debug, Clone)]
pub struct RansacResult {
    pub correspondences: Vec<Correspondence>,
    /// Transform mapping a-cloud positions onto b-cloud positions, refit on
    /// the consensus set.
    pub transform: Option<Pose>,
    pub verified: bool,
}

impl RansacResult {
    pub fn inliers(&self) -> impl Iterator<Item = &Correspondence> {
        self.correspondences.iter().filter(|c| c.inlier)
    }

    pub fn inlier_count(&self) -> usize {
        self.correspondences.iter().filter(|c| c.inlier).count()
    }
}

/// Rigid-transform RANSAC over matched keypoint positions.
///
/// Minimal 3-point hypotheses; degenerate (collinear) samples are skipped
/// and count as iterations. The caller supplies the RNG, so results are
/// reproducible given a seeded generator.
pub fn ransac_filter<R: Rng>(
    matches: &[Correspondence],
    a: &KeypointCloud,
    b: &KeypointCloud,
    inlier_dist: f64,
    iterations: usize,
    rng: &mut R,
) -> RansacResult {
    if matches.len() < 3 {
        return RansacResult {
            correspondences: matches.to_vec(),
            transform: None,
            verified: false,
        };
    }

    let pa: Vec<Vector3<f64>> = matches.iter().map(|m| a.points[m.index_a].position).collect();
    let pb: Vec<Vector3<f64>> = matches.iter().map(|m| b.points[m.index_b].position).collect();

    let mut best_inliers: Vec<usize> = Vec::new();
    for _ in 0..iterations {
        let mut sample = [0usize; 3];
        sample[0] = rng.gen_range(0..matches.len());
        loop {
            sample[1] = rng.gen_range(0..matches.len());
            if sample[1] != sample[0] {
                break;
            }
        }
        loop {
            sample[2] = rng.gen_range(0..matches.len());
            if sample[2] != sample[0] && sample[2] != sample[1] {
                break;
            }
        }
        let sa: Vec<Vector3<f64>> = sample.iter().map(|&i| pa[i]).collect();
        let sb: Vec<Vector3<f64>> = sample.iter().map(|&i| pb[i]).collect();
        let Ok(pose) = umeyama_align(&sa, &sb) else {
            continue; // degenerate sample, draw again
        };
        let inliers: Vec<usize> = (0..matches.len())
            .filter(|&i| (pose.transform_point(&pa[i]) - pb[i]).norm() < inlier_dist)
            .collect();
        if inliers.len() > best_inliers.len() {
            best_inliers = inliers;
        }
    }

    let transform = if best_inliers.len() >= 3 {
        let sa: Vec<Vector3<f64>> = best_inliers.iter().map(|&i| pa[i]).collect();
        let sb: Vec<Vector3<f64>> = best_inliers.iter().map(|&i| pb[i]).collect();
        umeyama_align(&sa, &sb).ok()
    } else {
        None
    };

    let inlier_set: std::collections::HashSet<usize> = best_inliers.into_iter().collect();
    let correspondences = matches
        .iter()
        .enumerate()
        .map(|(i, m)| Correspondence {
            inlier: inlier_set.contains(&i),
            ..*m
        })
        .collect();
    RansacResult {
        correspondences,
        transform,
        verified: true,
    }
}
