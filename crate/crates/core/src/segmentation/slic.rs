//! SLIC clustering over the joint (spectrum, position) feature space.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{RegionMap, SegmentError};
use crate::hsi::{normalize, HsiCube};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicParams {
    pub n_regions_target: usize,
    /// Spatial weight `m`; pixel distances are scaled by `m / S`.
    pub compactness: f64,
    pub iters: usize,
}

impl SlicParams {
    pub fn new(n_regions_target: usize) -> Self {
        Self {
            n_regions_target,
            compactness: 0.1,
            iters: 10,
        }
    }
}

struct Center {
    row: f64,
    col: f64,
    spectrum: Vec<f64>,
}

/// Splits `cube` into roughly `n_regions_target` connected regions.
///
/// The cube is min-max normalized per band first. Seeds sit on a regular
/// grid; each round assigns pixels within a `2S x 2S` window around each
/// center and moves centers to their members' mean. Afterwards, every label's
/// largest 4-connected component is kept and the remaining fragments are
/// merged into their largest neighbouring region, so the final count may be
/// below the target.
pub fn segment_regions(
    cube: &HsiCube,
    n_regions_target: usize,
    compactness: f64,
    iters: usize,
) -> Result<RegionMap, SegmentError> {
    let (h, w, bands) = (cube.height(), cube.width(), cube.bands());
    let n = h * w;
    if n_regions_target < 1 || n_regions_target > n {
        return Err(SegmentError::InvalidTarget {
            target: n_regions_target,
            pixels: n,
        });
    }
    if !(compactness > 0.0 && compactness.is_finite()) {
        return Err(SegmentError::InvalidParameter(format!(
            "compactness must be positive, got {compactness}"
        )));
    }
    if iters == 0 {
        return Err(SegmentError::InvalidParameter("iters must be >= 1".into()));
    }

    let features: Vec<f64> = normalize(cube).values().iter().map(|&v| v as f64).collect();
    let spectrum = |p: usize| &features[p * bands..(p + 1) * bands];

    let step = ((n as f64) / n_regions_target as f64).sqrt();
    let grid_rows = ((n_regions_target as f64 * h as f64 / w as f64).sqrt().round() as usize).clamp(1, h);
    let grid_cols = ((n_regions_target as f64 / grid_rows as f64).round() as usize).clamp(1, w);
    let mut centers: Vec<Center> = Vec::with_capacity(grid_rows * grid_cols);
    for i in 0..grid_rows {
        for j in 0..grid_cols {
            let row = (i as f64 + 0.5) * h as f64 / grid_rows as f64 - 0.5;
            let col = (j as f64 + 0.5) * w as f64 / grid_cols as f64 - 0.5;
            let p = (row.round() as usize).min(h - 1) * w + (col.round() as usize).min(w - 1);
            centers.push(Center {
                row,
                col,
                spectrum: spectrum(p).to_vec(),
            });
        }
    }

    let spatial_weight = (compactness / step).powi(2);
    let half = step
        .max(h as f64 / grid_rows as f64)
        .max(w as f64 / grid_cols as f64)
        .ceil() as isize;
    let dist = |c: &Center, p: usize| {
        let spec: f64 = c
            .spectrum
            .iter()
            .zip(spectrum(p))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let dr = (p / w) as f64 - c.row;
        let dc = (p % w) as f64 - c.col;
        spec + spatial_weight * (dr * dr + dc * dc)
    };

    let mut labels = vec![u32::MAX; n];
    let mut best = vec![f64::INFINITY; n];
    for _ in 0..iters {
        labels.fill(u32::MAX);
        best.fill(f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let r0 = (c.row.round() as isize - half).max(0) as usize;
            let r1 = ((c.row.round() as isize + half) as usize).min(h - 1);
            let c0 = (c.col.round() as isize - half).max(0) as usize;
            let c1 = ((c.col.round() as isize + half) as usize).min(w - 1);
            for r in r0..=r1 {
                for col in c0..=c1 {
                    let p = r * w + col;
                    let d = dist(c, p);
                    if d < best[p] {
                        best[p] = d;
                        labels[p] = k as u32;
                    }
                }
            }
        }
        for p in 0..n {
            if labels[p] == u32::MAX {
                let (k, _) = centers
                    .iter()
                    .enumerate()
                    .map(|(k, c)| (k, dist(c, p)))
                    .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
                labels[p] = k as u32;
            }
        }

        let mut sums = vec![(0.0, 0.0, vec![0.0; bands], 0usize); centers.len()];
        for p in 0..n {
            let s = &mut sums[labels[p] as usize];
            s.0 += (p / w) as f64;
            s.1 += (p % w) as f64;
            for (acc, v) in s.2.iter_mut().zip(spectrum(p)) {
                *acc += v;
            }
            s.3 += 1;
        }
        for (c, (sr, sc, ss, count)) in centers.iter_mut().zip(sums) {
            if count > 0 {
                let inv = 1.0 / count as f64;
                c.row = sr * inv;
                c.col = sc * inv;
                c.spectrum = ss.into_iter().map(|v| v * inv).collect();
            }
        }
    }

    let merged = enforce_connectivity(&labels, h, w);
    RegionMap::from_labels(h, w, merged)
}

/// Keeps the largest 4-connected component of each label and merges every
/// other component into the largest adjacent region. Returns dense labels
/// numbered by first appearance in raster order.
fn enforce_connectivity(labels: &[u32], h: usize, w: usize) -> Vec<u32> {
    let n = h * w;
    let neighbours = |p: usize| {
        let (r, c) = (p / w, p % w);
        let mut out = [usize::MAX; 4];
        if r > 0 {
            out[0] = p - w;
        }
        if r + 1 < h {
            out[1] = p + w;
        }
        if c > 0 {
            out[2] = p - 1;
        }
        if c + 1 < w {
            out[3] = p + 1;
        }
        out.into_iter().filter(|&q| q != usize::MAX)
    };

    let mut comp = vec![usize::MAX; n];
    let mut comp_pixels: Vec<Vec<usize>> = Vec::new();
    let mut comp_label: Vec<u32> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_pixels.len();
        let mut pixels = vec![start];
        comp[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for q in neighbours(p) {
                if comp[q] == usize::MAX && labels[q] == labels[start] {
                    comp[q] = id;
                    pixels.push(q);
                    queue.push_back(q);
                }
            }
        }
        comp_pixels.push(pixels);
        comp_label.push(labels[start]);
    }

    let n_labels = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut keeper: Vec<Option<usize>> = vec![None; n_labels];
    for (id, pixels) in comp_pixels.iter().enumerate() {
        let slot = &mut keeper[comp_label[id] as usize];
        match slot {
            Some(k) if comp_pixels[*k].len() >= pixels.len() => {}
            _ => *slot = Some(id),
        }
    }

    // root[id] = keeper component the fragment ended up in
    let mut root: Vec<Option<usize>> = vec![None; comp_pixels.len()];
    let mut region_size = vec![0usize; comp_pixels.len()];
    for k in keeper.iter().flatten() {
        root[*k] = Some(*k);
        region_size[*k] = comp_pixels[*k].len();
    }
    let mut pending: Vec<usize> = (0..comp_pixels.len()).filter(|&id| root[id].is_none()).collect();
    while !pending.is_empty() {
        let mut still = Vec::new();
        for &id in &pending {
            let mut target: Option<usize> = None;
            for &p in &comp_pixels[id] {
                for q in neighbours(p) {
                    if let Some(r) = root[comp[q]] {
                        let better = match target {
                            None => true,
                            Some(t) => region_size[r] > region_size[t] || (region_size[r] == region_size[t] && r < t),
                        };
                        if better {
                            target = Some(r);
                        }
                    }
                }
            }
            match target {
                Some(t) => {
                    root[id] = Some(t);
                    region_size[t] += comp_pixels[id].len();
                }
                None => still.push(id),
            }
        }
        debug_assert!(still.len() < pending.len(), "fragment merge made no progress");
        pending = still;
    }

    let mut dense = vec![u32::MAX; comp_pixels.len()];
    let mut next = 0u32;
    let mut out = vec![0u32; n];
    for p in 0..n {
        let r = root[comp[p]].expect("every component resolved");
        if dense[r] == u32::MAX {
            dense[r] = next;
            next += 1;
        }
        out[p] = dense[r];
    }
    out
}
