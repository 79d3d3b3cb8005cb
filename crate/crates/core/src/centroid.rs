//! Grouping of raw pixel hits into per-photon clusters and reduction of each
//! cluster to one sub-pixel event.
//!
//! A single photon fires a patch of neighboring pixels within a short time
//! span. Two hits belong to the same cluster when they are linked by a chain
//! of hits, each pair within the spatial radius (Chebyshev metric) and the
//! temporal window. Clustering works on raw times; the per-hit time-walk
//! correction applies afterwards, inside the centroid reduction.

use core::fmt;

// Float methods resolve through the trait when std is off.
#[allow(unused_imports)]
use num_traits::Float;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::event::{PhotonEvent, PixelHit};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusteringParams {
    /// Chebyshev linking distance in pixels. 0 links same-pixel hits only.
    pub spatial_radius_px: u16,
    /// Linking window on raw time of arrival, nanoseconds.
    pub temporal_window_ns: f64,
}

impl Default for ClusteringParams {
    fn default() -> Self {
        ClusteringParams {
            spatial_radius_px: 2,
            temporal_window_ns: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CentroidError {
    /// Hit at `index` arrives earlier than its predecessor; callers must
    /// sort by time of arrival first.
    UnsortedInput { index: usize },
    InvalidWindow { window_ns: f64 },
    /// Calibration knots must have finite values and strictly increasing tot.
    BadKnot { index: usize },
}

impl fmt::Display for CentroidError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CentroidError::UnsortedInput { index } => {
                write!(f, "hits must be sorted by time of arrival (violated at index {index})")
            }
            CentroidError::InvalidWindow { window_ns } => {
                write!(f, "temporal window must be finite and > 0, got {window_ns} ns")
            }
            CentroidError::BadKnot { index } => {
                write!(f, "calibration knot {index} is non-finite or out of order")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CentroidError {}

/// Piecewise-linear time-walk correction, subtracted from each hit's time.
///
/// Low-amplitude hits cross threshold late; the correction as a function of
/// tot undoes that. An empty knot list is the identity (no correction).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimingCalibration {
    knots: Vec<(f64, f64)>,
}

impl TimingCalibration {
    pub fn identity() -> Self {
        TimingCalibration::default()
    }

    /// Knots as (tot, correction_ns), strictly increasing in tot.
    pub fn from_knots(knots: Vec<(f64, f64)>) -> Result<Self, CentroidError> {
        for (i, &(tot, corr)) in knots.iter().enumerate() {
            if !tot.is_finite() || !corr.is_finite() {
                return Err(CentroidError::BadKnot { index: i });
            }
            if i > 0 && knots[i - 1].0 >= tot {
                return Err(CentroidError::BadKnot { index: i });
            }
        }
        Ok(TimingCalibration { knots })
    }

    pub fn is_identity(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Correction in nanoseconds for a given tot. Linear between knots,
    /// clamped to the end values outside the knot range.
    pub fn correction_ns(&self, tot: u16) -> f64 {
        let k = &self.knots;
        if k.is_empty() {
            return 0.0;
        }
        let t = tot as f64;
        let hi = k.partition_point(|&(kt, _)| kt < t);
        if hi == 0 {
            return k[0].1;
        }
        if hi == k.len() {
            return k[k.len() - 1].1;
        }
        let (t0, c0) = k[hi - 1];
        let (t1, c1) = k[hi];
        c0 + (c1 - c0) * (t - t0) / (t1 - t0)
    }
}

/// Per-cell hit buckets. Buckets accumulate hit indices in time order; a
/// start cursor advances past entries older than the window, so each index
/// is pushed and skipped at most once over a whole run.
enum CellGrid {
    /// Row-major dense grid for ordinary sensor extents.
    Dense {
        buckets: Vec<Bucket>,
        cols: usize,
    },
    /// Sparse map for pathological coordinate ranges.
    Sparse(BTreeMap<(u16, u16), Bucket>),
}

#[derive(Default)]
struct Bucket {
    idxs: Vec<u32>,
    start: usize,
}

const MAX_DENSE_CELLS: usize = 1 << 22;

impl CellGrid {
    fn new(hits: &[PixelHit], cell: u16) -> Self {
        let (mut mx, mut my) = (0u16, 0u16);
        for h in hits {
            mx = mx.max(h.x);
            my = my.max(h.y);
        }
        let cols = (mx / cell) as usize + 1;
        let rows = (my / cell) as usize + 1;
        if let Some(n) = cols.checked_mul(rows).filter(|&n| n <= MAX_DENSE_CELLS) {
            let mut buckets = Vec::new();
            buckets.resize_with(n, Bucket::default);
            CellGrid::Dense { buckets, cols }
        } else {
            CellGrid::Sparse(BTreeMap::new())
        }
    }

    fn bucket_mut(&mut self, cx: u16, cy: u16) -> Option<&mut Bucket> {
        match self {
            CellGrid::Dense { buckets, cols } => {
                // The neighbor probe reaches one cell past the occupied
                // bounding box.
                if cx as usize >= *cols {
                    return None;
                }
                buckets.get_mut(cy as usize * *cols + cx as usize)
            }
            CellGrid::Sparse(map) => map.get_mut(&(cx, cy)),
        }
    }

    fn push(&mut self, cx: u16, cy: u16, idx: u32) {
        match self {
            CellGrid::Dense { buckets, cols } => {
                buckets[cy as usize * *cols + cx as usize].idxs.push(idx)
            }
            CellGrid::Sparse(map) => map.entry((cx, cy)).or_default().idxs.push(idx),
        }
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut i: u32) -> u32 {
        while self.parent[i as usize] != i {
            let g = self.parent[self.parent[i as usize] as usize];
            self.parent[i as usize] = g;
            i = g;
        }
        i
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Attach the younger root so each cluster's root stays its
            // earliest member.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Partition time-sorted hits into clusters of indices.
///
/// Clusters are ordered by their earliest hit; member indices ascend within
/// each cluster. Every input index appears in exactly one cluster.
pub fn cluster_hits(
    hits: &[PixelHit],
    params: &ClusteringParams,
) -> Result<Vec<Vec<usize>>, CentroidError> {
    if !(params.temporal_window_ns > 0.0) || !params.temporal_window_ns.is_finite() {
        return Err(CentroidError::InvalidWindow {
            window_ns: params.temporal_window_ns,
        });
    }
    if let Some(index) = hits
        .windows(2)
        .position(|w| w[0].toa_ps > w[1].toa_ps)
        .map(|i| i + 1)
    {
        return Err(CentroidError::UnsortedInput { index });
    }
    if hits.len() > u32::MAX as usize {
        // Index arithmetic below runs in u32 to halve union-find memory.
        return Err(CentroidError::UnsortedInput { index: u32::MAX as usize });
    }

    let radius = params.spatial_radius_px;
    let window_ps = (params.temporal_window_ns * 1e3).round() as u64;
    // Cell edge >= radius, so any hit within Chebyshev distance `radius`
    // lies in the same cell or one of the eight adjacent cells.
    let cell = radius.max(1);
    let mut grid = CellGrid::new(hits, cell);
    let mut uf = UnionFind::new(hits.len());

    for (i, h) in hits.iter().enumerate() {
        let (cx, cy) = (h.x / cell, h.y / cell);
        for ncy in cy.saturating_sub(1)..=cy.saturating_add(1) {
            for ncx in cx.saturating_sub(1)..=cx.saturating_add(1) {
                let Some(bucket) = grid.bucket_mut(ncx, ncy) else {
                    continue;
                };
                while bucket.start < bucket.idxs.len() {
                    let j = bucket.idxs[bucket.start] as usize;
                    if h.toa_ps - hits[j].toa_ps > window_ps {
                        bucket.start += 1;
                    } else {
                        break;
                    }
                }
                for &j in &bucket.idxs[bucket.start..] {
                    let o = &hits[j as usize];
                    let dx = h.x.abs_diff(o.x);
                    let dy = h.y.abs_diff(o.y);
                    if dx.max(dy) <= radius {
                        uf.union(i as u32, j);
                    }
                }
            }
        }
        grid.push(cx, cy, i as u32);
    }

    // Roots are their component's earliest member, so first-seen order of
    // roots is exactly the earliest-hit order required of clusters.
    let mut cluster_of_root: Vec<u32> = alloc::vec![u32::MAX; hits.len()];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..hits.len() as u32 {
        let r = uf.find(i) as usize;
        if cluster_of_root[r] == u32::MAX {
            cluster_of_root[r] = clusters.len() as u32;
            clusters.push(Vec::new());
        }
        clusters[cluster_of_root[r] as usize].push(i as usize);
    }
    Ok(clusters)
}

fn centroid_of<'a>(
    members: impl Iterator<Item = &'a PixelHit>,
    calibration: &TimingCalibration,
) -> PhotonEvent {
    let mut sum_w = 0.0f64;
    let mut sum_x = 0.0f64;
    let mut sum_y = 0.0f64;
    let mut amplitude = 0u32;
    let mut t_ns = f64::INFINITY;
    let mut n = 0usize;
    for h in members {
        let w = h.tot as f64;
        sum_w += w;
        sum_x += w * h.x as f64;
        sum_y += w * h.y as f64;
        amplitude += h.tot as u32;
        let t = h.toa_ps as f64 * 1e-3 - calibration.correction_ns(h.tot);
        t_ns = t_ns.min(t);
        n += 1;
    }
    assert!(n > 0, "centroid of an empty cluster");
    PhotonEvent {
        x: sum_x / sum_w,
        y: sum_y / sum_w,
        // Corrections can push the earliest hit slightly before run start.
        t_ns: t_ns.max(0.0),
        amplitude,
    }
}

/// Reduce one cluster to a photon event: tot-weighted mean of pixel centers,
/// summed amplitude, and the earliest member time after walk correction.
pub fn centroid(cluster: &[PixelHit], calibration: &TimingCalibration) -> PhotonEvent {
    centroid_of(cluster.iter(), calibration)
}

/// Cluster and centroid in one pass. Events come out in cluster order
/// (earliest raw hit first), which walk corrections may leave slightly
/// unsorted in corrected time.
pub fn process(
    hits: &[PixelHit],
    params: &ClusteringParams,
    calibration: &TimingCalibration,
) -> Result<Vec<PhotonEvent>, CentroidError> {
    let clusters = cluster_hits(hits, params)?;
    Ok(clusters
        .iter()
        .map(|members| centroid_of(members.iter().map(|&i| &hits[i]), calibration))
        .collect())
}
