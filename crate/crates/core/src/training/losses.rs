use ndarray::{Array2, ArrayView2};

use super::mask::MaskVector;
use super::TrainError;
use crate::nn::{EncoderPath, GradientVector, RsalAutoencoder};

/// `(sum |r|^k)^(1/k)`
pub fn k_norm(r: &[f64], k: f64) -> f64 {
    if k == 2.0 {
        r.iter().map(|v| v * v).sum::<f64>().sqrt()
    } else {
        r.iter().map(|v| v.abs().powf(k)).sum::<f64>().powf(1.0 / k)
    }
}

/// Gradient of [`k_norm`], taken as zero at the origin.
fn k_norm_grad(r: &[f64], k: f64, out: &mut [f64]) {
    let n = k_norm(r, k);
    if n == 0.0 {
        out.fill(0.0);
        return;
    }
    for (o, &v) in out.iter_mut().zip(r) {
        *o = if k == 2.0 {
            v / n
        } else {
            v.signum() * (v.abs() / n).powf(k - 1.0)
        };
    }
}

/// Mean over rows of `||target_i - out_i||_k`, with its gradient with
/// respect to `out`.
pub fn mean_row_norm(target: ArrayView2<f64>, out: ArrayView2<f64>, k: f64) -> (f64, Array2<f64>) {
    let n = target.nrows() as f64;
    let mut grad = Array2::zeros(out.dim());
    let mut total = 0.0;
    let mut r = vec![0.0; target.ncols()];
    for ((t, o), mut g) in target.rows().into_iter().zip(out.rows()).zip(grad.rows_mut()) {
        r.iter_mut().zip(t.iter().zip(o)).for_each(|(ri, (a, b))| *ri = a - b);
        total += k_norm(&r, k);
        k_norm_grad(&r, k, g.as_slice_mut().unwrap());
        g.mapv_inplace(|v| -v / n);
    }
    (total / n, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusLosses {
    pub l_ori: f64,
    pub l_mask: f64,
    /// `||x_i - D(E(x))_i||_k` per row, against the unmasked input.
    pub region_errors: Vec<f64>,
}

fn check(model: &RsalAutoencoder, seq: &Array2<f64>, mask: &MaskVector) -> Result<(), TrainError> {
    if seq.nrows() != mask.len() || seq.ncols() != model.config().bands {
        return Err(TrainError::ShapeMismatch(format!(
            "sequence {:?}, mask {}, model bands {}",
            seq.dim(),
            mask.len(),
            model.config().bands
        )));
    }
    Ok(())
}

fn region_errors(seq: &Array2<f64>, recon: &Array2<f64>, k: f64) -> Vec<f64> {
    seq.rows()
        .into_iter()
        .zip(recon.rows())
        .map(|(a, b)| {
            let r: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            k_norm(&r, k)
        })
        .collect()
}

/// Both consensus losses; the target of each path is `M ⊙ X`.
pub fn consensus_losses(
    model: &RsalAutoencoder,
    seq: &Array2<f64>,
    mask: &MaskVector,
    k: f64,
) -> Result<ConsensusLosses, TrainError> {
    check(model, seq, mask)?;
    let target = mask.apply(seq);
    let recon = model.forward(seq.view(), EncoderPath::Original)?;
    let recon_m = model.forward(target.view(), EncoderPath::Masked)?;
    Ok(ConsensusLosses {
        l_ori: mean_row_norm(target.view(), recon.view(), k).0,
        l_mask: mean_row_norm(target.view(), recon_m.view(), k).0,
        region_errors: region_errors(seq, &recon, k),
    })
}

/// [`consensus_losses`] plus the gradient of each loss.
pub fn consensus_gradients(
    model: &RsalAutoencoder,
    seq: &Array2<f64>,
    mask: &MaskVector,
    k: f64,
) -> Result<(ConsensusLosses, GradientVector, GradientVector), TrainError> {
    check(model, seq, mask)?;
    let target = mask.apply(seq);
    let (recon, tape) = model.forward_recorded(seq.view(), EncoderPath::Original)?;
    let (l_ori, d_ori) = mean_row_norm(target.view(), recon.view(), k);
    let g_ori = model.backward(&tape, d_ori.view())?;
    drop(tape);
    let (recon_m, tape) = model.forward_recorded(target.view(), EncoderPath::Masked)?;
    let (l_mask, d_mask) = mean_row_norm(target.view(), recon_m.view(), k);
    let g_mask = model.backward(&tape, d_mask.view())?;
    let losses = ConsensusLosses {
        l_ori,
        l_mask,
        region_errors: region_errors(seq, &recon, k),
    };
    Ok((losses, g_ori, g_mask))
}
