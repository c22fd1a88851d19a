//! Exact nearest-neighbour densification of sparse depth maps.
//!
//! Every output pixel copies the depth of the closest valid pixel in
//! Euclidean distance. Equidistant candidates are resolved by smallest row,
//! then smallest column, so the result is fully determined.
//!
//! The implementation is a separable distance transform carrying site labels:
//! a column pass finds the nearest valid row per column, then a row pass
//! builds the lower envelope of the parabolas `(x - col)^2 + dy^2`. Ties are
//! folded into the envelope by ordering candidates on `(distance, row, col)`,
//! which keeps the result identical to a brute-force argmin. All distances are
//! exact integers, so there is no floating-point ambiguity.

use crate::error::{Error, Result};
use crate::image::{DepthMap, ImageSigned};

/// Default clamp range for depth encoding, in meters.
pub const DEFAULT_MAX_RANGE: f64 = 100.0;

/// Fully valid depth map.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseDepth {
    width: usize,
    height: usize,
    depth: Vec<f64>,
}

impl DenseDepth {
    pub fn new(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        if depth.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "depth length {} != {width}x{height}",
                depth.len()
            )));
        }
        if let Some(d) = depth.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::InvalidImage(format!("invalid depth {d}")));
        }
        Ok(Self {
            width,
            height,
            depth,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.depth[v * self.width + u]
    }
}

impl From<DenseDepth> for DepthMap {
    fn from(d: DenseDepth) -> Self {
        let n = d.depth.len();
        DepthMap::new(d.width, d.height, d.depth, vec![true; n]).expect("dense depth is valid")
    }
}

/// Index of the nearest valid pixel for every pixel, row-major.
pub fn nearest_sites(sparse: &DepthMap) -> Result<Vec<usize>> {
    let (w, h) = (sparse.width(), sparse.height());
    let valid = sparse.valid();
    if !valid.iter().any(|v| *v) {
        return Err(Error::EmptySparseMap);
    }

    // Column pass: nearest valid row per (row, column), ties to the smaller row.
    let mut site_row = vec![usize::MAX; w * h];
    let mut above = vec![usize::MAX; h];
    for x in 0..w {
        let mut last = usize::MAX;
        for y in 0..h {
            if valid[y * w + x] {
                last = y;
            }
            above[y] = last;
        }
        let mut below = usize::MAX;
        for y in (0..h).rev() {
            if valid[y * w + x] {
                below = y;
            }
            site_row[y * w + x] = match (above[y], below) {
                (usize::MAX, b) => b,
                (a, usize::MAX) => a,
                (a, b) => {
                    if y - a <= b - y {
                        a
                    } else {
                        b
                    }
                }
            };
        }
    }

    // Row pass: lower envelope over columns keyed by (d2, site row, column).
    let mut out = vec![0usize; w * h];
    let mut hull: Vec<(usize, i64)> = Vec::with_capacity(w);
    for y in 0..h {
        hull.clear();
        let row = &site_row[y * w..(y + 1) * w];
        let cost = |x: usize| {
            let r = row[x];
            let dy = r as i64 - y as i64;
            (dy * dy, r)
        };
        for q in (0..w).filter(|&x| row[x] != usize::MAX) {
            let (gq, rq) = cost(q);
            loop {
                let Some(&(p, start)) = hull.last() else {
                    hull.push((q, i64::MIN));
                    break;
                };
                let (gp, rp) = cost(p);
                let t = takeover(p as i64, gp, rp, q as i64, gq, rq);
                if t <= start {
                    hull.pop();
                } else {
                    hull.push((q, t));
                    break;
                }
            }
        }
        let mut k = 0;
        for x in 0..w {
            while k + 1 < hull.len() && hull[k + 1].1 <= x as i64 {
                k += 1;
            }
            let col = hull[k].0;
            out[y * w + x] = row[col] * w + col;
        }
    }
    Ok(out)
}

/// First integer `x` at which column `q` beats column `p` (`p < q`).
///
/// `f_q(x) - f_p(x)` is linear and decreasing in `x`, crossing zero at
/// `s = (gq + q^2 - gp - p^2) / (2 (q - p))`. At an exact tie the candidate
/// with the smaller row wins; rows being equal, `p` wins by column.
fn takeover(p: i64, gp: i64, rp: usize, q: i64, gq: i64, rq: usize) -> i64 {
    let num = (gq + q * q) - (gp + p * p);
    let den = 2 * (q - p);
    let floor = num.div_euclid(den);
    let exact = num.rem_euclid(den) == 0;
    if rq < rp {
        // q wins ties: first x >= s
        if exact {
            floor
        } else {
            floor + 1
        }
    } else {
        // p wins ties: first x > s
        floor + 1
    }
}

/// Fills every pixel with the depth of its nearest valid pixel.
pub fn densify_nearest(sparse: &DepthMap) -> Result<DenseDepth> {
    let sites = nearest_sites(sparse)?;
    let depth = sites.iter().map(|&i| sparse.depth()[i]).collect();
    DenseDepth::new(sparse.width(), sparse.height(), depth)
}

/// Linear depth encoding to one signed channel: `2 min(d, r) / r - 1`.
pub fn encode_for_generator(dense: &DenseDepth, max_range: f64) -> Result<ImageSigned> {
    if !(max_range.is_finite() && max_range > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "max_range must be > 0, got {max_range}"
        )));
    }
    let data = dense
        .depth
        .iter()
        .map(|&d| (2.0 * d.min(max_range) / max_range - 1.0).clamp(-1.0, 1.0))
        .collect();
    ImageSigned::new(dense.width, dense.height, 1, data)
}
