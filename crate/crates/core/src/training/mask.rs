use rand::Rng;

use super::TrainError;

/// Additive smoothing so regions with no recorded error can still be drawn.
pub const MASK_EPS: f64 = 1e-8;

/// Keep/drop flag per region, aligned with the scan order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVector {
    keep: Vec<bool>,
}

impl MaskVector {
    pub fn all_keep(len: usize) -> Self {
        Self { keep: vec![true; len] }
    }

    pub fn from_keep(keep: Vec<bool>) -> Self {
        Self { keep }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn dropped(&self) -> usize {
        self.keep.iter().filter(|&&k| !k).count()
    }

    /// `M ⊙ X`: zeroes dropped rows.
    pub fn apply(&self, seq: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
        let mut out = seq.clone();
        for (mut row, &k) in out.rows_mut().into_iter().zip(&self.keep) {
            if !k {
                row.fill(0.0);
            }
        }
        out
    }
}

/// Running sum of per-region reconstruction errors.
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyTracker {
    cumulative: Vec<f64>,
    epoch: usize,
}

impl DifficultyTracker {
    pub fn new(n_regions: usize) -> Self {
        Self {
            cumulative: vec![0.0; n_regions],
            epoch: 0,
        }
    }

    pub fn from_errors(cumulative: Vec<f64>) -> Self {
        Self { cumulative, epoch: 0 }
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    pub fn update(&mut self, errors: &[f64]) -> Result<(), TrainError> {
        if errors.len() != self.cumulative.len() {
            return Err(TrainError::LengthMismatch {
                expected: self.cumulative.len(),
                found: errors.len(),
            });
        }
        for (c, &e) in self.cumulative.iter_mut().zip(errors) {
            *c += e.max(0.0);
        }
        self.epoch += 1;
        Ok(())
    }
}

/// Drops `round(eta * N_r)` regions, drawn without replacement with
/// probability proportional to `cumulative error + MASK_EPS`.
pub fn generate_mask<R: Rng + ?Sized>(tracker: &DifficultyTracker, eta: f64, rng: &mut R) -> MaskVector {
    let n = tracker.len();
    let m = ((eta * n as f64).round() as usize).min(n);
    let mut weights: Vec<f64> = tracker.cumulative.iter().map(|&e| e + MASK_EPS).collect();
    let mut keep = vec![true; n];
    for _ in 0..m {
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            pick = Some(i);
            if u < w {
                break;
            }
            u -= w;
        }
        // rounding can walk past the last positive weight; `pick` then holds it
        let i = pick.expect("fewer draws than regions");
        keep[i] = false;
        weights[i] = 0.0;
    }
    MaskVector { keep }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_keeps_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = DifficultyTracker::from_errors(vec![5.0, 1.0, 0.0]);
        assert_eq!(generate_mask(&t, 0.0, &mut rng), MaskVector::all_keep(3));
    }

    #[test]
    fn uniform_weights_give_uniform_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = DifficultyTracker::new(4);
        let mut hits = [0usize; 4];
        for _ in 0..10_000 {
            let m = generate_mask(&t, 0.5, &mut rng);
            assert_eq!(m.dropped(), 2);
            for (h, &k) in hits.iter_mut().zip(m.keep()) {
                *h += usize::from(!k);
            }
        }
        for h in hits {
            assert!((h as f64 / 10_000.0 - 0.5).abs() <= 0.02, "{h}");
        }
    }

    #[test]
    fn heavy_region_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = DifficultyTracker::from_errors(vec![100.0, 1.0, 1.0, 1.0]);
        let hits = (0..10_000).filter(|_| !generate_mask(&t, 0.25, &mut rng).keep()[0]).count();
        assert!((hits as f64 / 10_000.0 - 100.0 / 103.0).abs() <= 0.02, "{hits}");
    }

    #[test]
    fn tracker_is_a_running_sum() {
        let mut t = DifficultyTracker::new(3);
        let mut expected = [0.0; 3];
        for e in [[1.0, 0.5, 0.0], [0.25, 0.0, 2.0], [0.0, 0.0, 0.0]] {
            let before = t.cumulative().to_vec();
            t.update(&e).unwrap();
            for i in 0..3 {
                expected[i] += e[i];
                assert!(t.cumulative()[i] >= before[i]);
            }
            assert_eq!(t.cumulative(), &expected);
        }
        assert_eq!(t.epoch(), 3);
        assert!(t.update(&[1.0]).is_err());
    }

    #[test]
    fn apply_zeroes_dropped_rows() {
        let x = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
        let m = MaskVector::from_keep(vec![true, false]);
        assert_eq!(m.apply(&x), ndarray::array![[1.0, 2.0], [0.0, 0.0]]);
    }
}
