//! Per-bin feature sets, densities and the bin sample fed to clustering.
//!
//! A bin's feature set holds the IDs of every line passing strictly closer
//! than the radius `T` to the bin center. Sets are stored in one compressed
//! row layout: `ids[offsets[b]..offsets[b + 1]]` is the ascending set of bin
//! `b`.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{GridSpec, LineSet, Point, Polyline, Transform};

/// Euclidean distance from `q` to the closed segment `[a, b]`.
pub fn point_segment_distance(q: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((q.x - a.x) * dx + (q.y - a.y) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (px, py) = (a.x + t * dx, a.y + t * dy);
    ((q.x - px).powi(2) + (q.y - py).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    spec: GridSpec,
    radius: f64,
    n_lines: usize,
    offsets: Vec<usize>,
    ids: Vec<u32>,
}

// Slack on traversal bounds so rounding never drops a bin the exact test keeps.
const BOUND_SLACK: f64 = 1e-7;

/// Collects the ascending list of bins whose center lies strictly within
/// `radius` of the polyline (in bin units after `spec.transform`).
///
/// `stamp` must have one slot per bin and must not contain `tag` on entry for
/// any bin; it is left tagged for the returned bins.
pub(crate) fn line_bins(line: &Polyline, spec: &GridSpec, radius: f64, stamp: &mut [u32], tag: u32) -> Vec<u32> {
    let mut bins = Vec::new();
    let (w, h) = (spec.width as i64, spec.height as i64);
    let pts: Vec<Point> = line.vertices.iter().map(|&p| spec.transform.apply(p)).collect();
    for seg in pts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let ylo = a.y.min(b.y) - radius - BOUND_SLACK;
        let yhi = a.y.max(b.y) + radius + BOUND_SLACK;
        let r0 = ((ylo - 0.5).ceil() as i64).max(0);
        let r1 = ((yhi - 0.5).floor() as i64).min(h - 1);
        let dy = b.y - a.y;
        for row in r0..=r1 {
            let yc = row as f64 + 0.5;
            // x-extent of the part of the segment inside the horizontal band
            // |y - yc| <= radius, widened by radius.
            let (xa, xb) = if dy.abs() < 1e-12 {
                if (a.y - yc).abs() >= radius + BOUND_SLACK {
                    continue;
                }
                (a.x, b.x)
            } else {
                let mut t0 = (yc - radius - BOUND_SLACK - a.y) / dy;
                let mut t1 = (yc + radius + BOUND_SLACK - a.y) / dy;
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                let (t0, t1) = (t0.max(0.0), t1.min(1.0));
                if t0 > t1 {
                    continue;
                }
                (a.x + t0 * (b.x - a.x), a.x + t1 * (b.x - a.x))
            };
            let xlo = xa.min(xb) - radius - BOUND_SLACK;
            let xhi = xa.max(xb) + radius + BOUND_SLACK;
            let c0 = ((xlo - 0.5).ceil() as i64).max(0);
            let c1 = ((xhi - 0.5).floor() as i64).min(w - 1);
            for col in c0..=c1 {
                let bin = spec.index(col as u32, row as u32);
                if stamp[bin] == tag {
                    continue;
                }
                let center = Point::new(col as f64 + 0.5, yc);
                if point_segment_distance(center, a, b) < radius {
                    stamp[bin] = tag;
                    bins.push(bin as u32);
                }
            }
        }
    }
    bins.sort_unstable();
    bins
}

fn check_radius(radius: f64) -> Result<()> {
    if radius > 0.0 && radius.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")))
    }
}

/// Computes the feature set of every bin.
///
/// Each segment only visits bins whose center can fall inside its capsule of
/// the given radius; every candidate then gets the exact distance test.
pub fn extract_feature_sets(ls: &LineSet, spec: &GridSpec, radius: f64) -> Result<FeatureGrid> {
    check_radius(radius)?;
    let nbins = spec.bin_count();
    let per_line: Vec<Vec<u32>> = ls
        .lines()
        .par_iter()
        .map_init(|| vec![u32::MAX; nbins], |stamp, line| line_bins(line, spec, radius, stamp, line.id))
        .collect();

    let mut offsets = vec![0usize; nbins + 1];
    for bins in &per_line {
        for &b in bins {
            offsets[b as usize + 1] += 1;
        }
    }
    for i in 0..nbins {
        offsets[i + 1] += offsets[i];
    }
    let mut cursor = offsets[..nbins].to_vec();
    let mut ids = vec![0u32; offsets[nbins]];
    // Lines are visited in ID order, so every bin's list comes out ascending.
    for (line_id, bins) in per_line.iter().enumerate() {
        for &b in bins {
            let slot = &mut cursor[b as usize];
            ids[*slot] = line_id as u32;
            *slot += 1;
        }
    }
    Ok(FeatureGrid { spec: *spec, radius, n_lines: ls.len(), offsets, ids })
}

impl FeatureGrid {
    /// Builds a grid from explicit per-bin sets. Each set is sorted and
    /// deduplicated; every ID must be below `n_lines`.
    pub fn from_sets(spec: GridSpec, radius: f64, n_lines: usize, sets: Vec<Vec<u32>>) -> Result<Self> {
        check_radius(radius)?;
        if sets.len() != spec.bin_count() {
            return Err(Error::InvalidParameter(format!("expected {} bin sets, got {}", spec.bin_count(), sets.len())));
        }
        let mut offsets = Vec::with_capacity(sets.len() + 1);
        let mut ids = Vec::new();
        offsets.push(0);
        for mut set in sets {
            set.sort_unstable();
            set.dedup();
            if let Some(&bad) = set.iter().find(|&&i| i as usize >= n_lines) {
                return Err(Error::InvalidParameter(format!("line id {bad} out of range")));
            }
            ids.extend_from_slice(&set);
            offsets.push(ids.len());
        }
        Ok(Self { spec, radius, n_lines, offsets, ids })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn n_lines(&self) -> usize {
        self.n_lines
    }

    pub fn bin_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Ascending line IDs of bin `bin`.
    pub fn set(&self, bin: usize) -> &[u32] {
        &self.ids[self.offsets[bin]..self.offsets[bin + 1]]
    }

    pub fn len_of(&self, bin: usize) -> usize {
        self.offsets[bin + 1] - self.offsets[bin]
    }

    pub fn total_entries(&self) -> usize {
        self.ids.len()
    }

    /// Per-bin sorted-set union with another grid over the same bins, used to
    /// merge grids extracted from disjoint line partitions.
    pub fn union(&self, other: &FeatureGrid) -> Result<FeatureGrid> {
        if self.spec != other.spec || self.radius != other.radius {
            return Err(Error::InvalidParameter("cannot merge grids with different parameters".into()));
        }
        let mut offsets = Vec::with_capacity(self.offsets.len());
        let mut ids = Vec::with_capacity(self.ids.len() + other.ids.len());
        offsets.push(0);
        for bin in 0..self.bin_count() {
            let (a, b) = (self.set(bin), other.set(bin));
            let (mut i, mut j) = (0, 0);
            while i < a.len() && j < b.len() {
                match a[i].cmp(&b[j]) {
                    std::cmp::Ordering::Less => {
                        ids.push(a[i]);
                        i += 1;
                    }
                    std::cmp::Ordering::Greater => {
                        ids.push(b[j]);
                        j += 1;
                    }
                    std::cmp::Ordering::Equal => {
                        ids.push(a[i]);
                        i += 1;
                        j += 1;
                    }
                }
            }
            ids.extend_from_slice(&a[i..]);
            ids.extend_from_slice(&b[j..]);
            offsets.push(ids.len());
        }
        Ok(FeatureGrid { spec: self.spec, radius: self.radius, n_lines: self.n_lines.max(other.n_lines), offsets, ids })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub spec: GridSpec,
    pub counts: Vec<u32>,
}

impl DensityGrid {
    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

pub fn density_of(fg: &FeatureGrid) -> DensityGrid {
    let counts = (0..fg.bin_count()).map(|b| fg.len_of(b) as u32).collect();
    DensityGrid { spec: fg.spec, counts }
}

pub const DEFAULT_MAX_SAMPLES: usize = 5000;
pub const DEFAULT_MIN_DENSITY: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinSample {
    /// Ascending bin indices.
    pub bin_indices: Vec<u32>,
    pub seed: u64,
    pub min_density: u32,
    pub max_samples: usize,
}

impl BinSample {
    pub fn len(&self) -> usize {
        self.bin_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bin_indices.is_empty()
    }
}

/// Number of bins whose density reaches `min_density`.
pub fn candidate_count(fg: &FeatureGrid, min_density: u32) -> usize {
    (0..fg.bin_count()).filter(|&b| fg.len_of(b) >= min_density as usize).count()
}

/// Selects the bins to cluster: every bin with density at least `min_density`,
/// thinned to `max_samples` by seeded uniform sampling without replacement.
pub fn sample_bins(fg: &FeatureGrid, min_density: u32, max_samples: usize, seed: u64) -> Result<BinSample> {
    if max_samples < 2 {
        return Err(Error::InvalidParameter(format!("max_samples must be at least 2, got {max_samples}")));
    }
    if min_density < 1 {
        return Err(Error::InvalidParameter("min_density must be at least 1".into()));
    }
    let candidates: Vec<u32> =
        (0..fg.bin_count()).filter(|&b| fg.len_of(b) >= min_density as usize).map(|b| b as u32).collect();
    if candidates.len() < 2 {
        return Err(Error::NothingToCluster);
    }
    let bin_indices = if candidates.len() <= max_samples {
        candidates
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<u32> = rand::seq::index::sample(&mut rng, candidates.len(), max_samples)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
        picked.sort_unstable();
        picked
    };
    Ok(BinSample { bin_indices, seed, min_density, max_samples })
}

// --- sidecar cache -------------------------------------------------------

const CACHE_MAGIC: &[u8; 8] = b"LHFGRID\0";
const CACHE_VERSION: u32 = 1;

/// Digest of the line geometry and grid transform; any change to either
/// produces a different key.
pub fn fingerprint(ls: &LineSet, spec: &GridSpec) -> [u8; 32] {
    let mut h = Sha256::new();
    let Transform { scale_x, scale_y, offset_x, offset_y } = spec.transform;
    for v in [scale_x, scale_y, offset_x, offset_y] {
        h.update(v.to_le_bytes());
    }
    h.update((ls.len() as u64).to_le_bytes());
    for line in ls.lines() {
        h.update((line.vertices.len() as u64).to_le_bytes());
        for p in &line.vertices {
            h.update(p.x.to_le_bytes());
            h.update(p.y.to_le_bytes());
        }
    }
    h.finalize().into()
}

impl FeatureGrid {
    pub fn write_cache<W: Write>(&self, fingerprint: &[u8; 32], mut w: W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&self.spec.width.to_le_bytes())?;
        w.write_all(&self.spec.height.to_le_bytes())?;
        w.write_all(&(self.n_lines as u64).to_le_bytes())?;
        w.write_all(&self.radius.to_le_bytes())?;
        let t = self.spec.transform;
        for v in [t.scale_x, t.scale_y, t.offset_x, t.offset_y] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(fingerprint)?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.offsets.len() * 8 + self.ids.len() * 4);
        for &o in &self.offsets {
            buf.extend_from_slice(&(o as u64).to_le_bytes());
        }
        for &id in &self.ids {
            buf.extend_from_slice(&id.to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    /// Reads a cached grid. Returns `Ok(None)` when the cache was written for
    /// different parameters or data; malformed files are errors.
    pub fn read_cache<R: Read>(
        mut r: R,
        spec: &GridSpec,
        radius: f64,
        n_lines: usize,
        fingerprint: &[u8; 32],
    ) -> Result<Option<FeatureGrid>> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Cache("bad magic".into()));
        }
        if read_u32(&mut r)? != CACHE_VERSION {
            return Ok(None);
        }
        let width = read_u32(&mut r)?;
        let height = read_u32(&mut r)?;
        let n = read_u64(&mut r)? as usize;
        let cached_radius = read_f64(&mut r)?;
        let transform = Transform {
            scale_x: read_f64(&mut r)?,
            scale_y: read_f64(&mut r)?,
            offset_x: read_f64(&mut r)?,
            offset_y: read_f64(&mut r)?,
        };
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest)?;
        let cached_spec = GridSpec { width, height, transform };
        if cached_spec != *spec || cached_radius != radius || n != n_lines || &digest != fingerprint {
            return Ok(None);
        }
        let total = read_u64(&mut r)? as usize;
        let nbins = spec.bin_count();
        let mut raw = vec![0u8; (nbins + 1) * 8];
        r.read_exact(&mut raw)?;
        let offsets: Vec<usize> =
            raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize).collect();
        let mut raw = vec![0u8; total * 4];
        r.read_exact(&mut raw)?;
        let ids: Vec<u32> = raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        let consistent = offsets[0] == 0
            && offsets[nbins] == total
            && offsets.windows(2).all(|w| w[0] <= w[1])
            && ids.iter().all(|&i| (i as usize) < n_lines);
        if !consistent {
            return Err(Error::Cache("inconsistent offsets".into()));
        }
        Ok(Some(FeatureGrid { spec: *spec, radius, n_lines, offsets, ids }))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

/// Loads feature sets from the sidecar at `path` when it matches, otherwise
/// extracts them and rewrites the sidecar. The flag reports a cache hit.
pub fn load_or_extract(path: &Path, ls: &LineSet, spec: &GridSpec, radius: f64) -> Result<(FeatureGrid, bool)> {
    let digest = fingerprint(ls, spec);
    if let Ok(file) = std::fs::File::open(path) {
        match FeatureGrid::read_cache(std::io::BufReader::new(file), spec, radius, ls.len(), &digest) {
            Ok(Some(fg)) => return Ok((fg, true)),
            Ok(None) => log::info!("feature cache {} is stale; rebuilding", path.display()),
            Err(e) => log::warn!("ignoring unreadable feature cache {}: {e}", path.display()),
        }
    }
    let fg = extract_feature_sets(ls, spec, radius)?;
    let file = std::fs::File::create(path)?;
    fg.write_cache(&digest, std::io::BufWriter::new(file))?;
    Ok((fg, false))
}
