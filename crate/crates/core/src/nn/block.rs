//! Bidirectional regional scanning block.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::params::{visit_array, visit_array_mut, Parameters};
use super::scan::{ssm_scan, ssm_scan_backward, ssm_scan_recorded, ScanDirection, ScanTape, SsmParams};
use super::{silu, silu_grad, NnError};

/// `in_dim -> inner -> out_dim`:
///
/// ```text
/// x  = seq W_in_x^T            z = seq W_in_z^T
/// x' = SiLU(conv3(x))
/// Y  = scan_fwd(x') + scan_bwd(x')
/// out = (Y * SiLU(z)) W_out^T + b_out
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct RsalBlock {
    /// `inner x in_dim`
    pub w_in_x: Array2<f64>,
    /// `inner x in_dim`
    pub w_in_z: Array2<f64>,
    /// `inner x 3`, taps for `t - 1`, `t`, `t + 1`.
    pub conv: Array2<f64>,
    pub forward_ssm: SsmParams,
    pub backward_ssm: SsmParams,
    /// `out_dim x inner`
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

/// Intermediates of one recorded block forward pass.
#[derive(Debug, Clone)]
pub struct BlockTape {
    input: Array2<f64>,
    x: Array2<f64>,
    conv_out: Array2<f64>,
    z: Array2<f64>,
    y: Array2<f64>,
    fwd: ScanTape,
    bwd: ScanTape,
}

impl RsalBlock {
    pub fn zeros(in_dim: usize, inner: usize, out_dim: usize, state_dim: usize) -> Self {
        Self {
            w_in_x: Array2::zeros((inner, in_dim)),
            w_in_z: Array2::zeros((inner, in_dim)),
            conv: Array2::zeros((inner, 3)),
            forward_ssm: SsmParams::zeros(inner, state_dim),
            backward_ssm: SsmParams::zeros(inner, state_dim),
            w_out: Array2::zeros((out_dim, inner)),
            b_out: Array1::zeros(out_dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(in_dim: usize, inner: usize, out_dim: usize, state_dim: usize, rng: &mut R) -> Self {
        fn uniform<R: Rng + ?Sized>(shape: (usize, usize), fan_in: usize, rng: &mut R) -> Array2<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..bound))
        }
        let w_in_x = uniform((inner, in_dim), in_dim, rng);
        let w_in_z = uniform((inner, in_dim), in_dim, rng);
        let conv = uniform((inner, 3), 3, rng);
        let forward_ssm = SsmParams::init(inner, state_dim, rng);
        let backward_ssm = SsmParams::init(inner, state_dim, rng);
        let w_out = uniform((out_dim, inner), inner, rng);
        Self {
            w_in_x,
            w_in_z,
            conv,
            forward_ssm,
            backward_ssm,
            w_out,
            b_out: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w_in_x.ncols()
    }

    pub fn inner_dim(&self) -> usize {
        self.w_in_x.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w_out.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.forward_ssm.state_dim()
    }

    fn check(&self, seq: &ArrayView2<f64>) -> Result<(), NnError> {
        if seq.nrows() == 0 {
            return Err(NnError::EmptySequence);
        }
        if seq.ncols() != self.in_dim() {
            return Err(NnError::DimMismatch(format!(
                "block expects {} input features, got {}",
                self.in_dim(),
                seq.ncols()
            )));
        }
        Ok(())
    }

    fn depthwise_conv(&self, x: &Array2<f64>) -> Array2<f64> {
        let len = x.nrows();
        let mut out = Array2::zeros(x.dim());
        for t in 0..len {
            for d in 0..x.ncols() {
                let mut v = self.conv[[d, 1]] * x[[t, d]];
                if t > 0 {
                    v += self.conv[[d, 0]] * x[[t - 1, d]];
                }
                if t + 1 < len {
                    v += self.conv[[d, 2]] * x[[t + 1, d]];
                }
                out[[t, d]] = v;
            }
        }
        out
    }

    fn head(&self, y: &Array2<f64>, z: &Array2<f64>) -> Array2<f64> {
        let gated = y * &z.mapv(silu);
        let mut out = gated.dot(&self.w_out.t());
        out += &self.b_out;
        out
    }

    pub fn forward(&self, seq: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check(&seq)?;
        let x = seq.dot(&self.w_in_x.t());
        let z = seq.dot(&self.w_in_z.t());
        let xs = self.depthwise_conv(&x).mapv(silu);
        let y = ssm_scan(&self.forward_ssm, xs.view(), ScanDirection::Forward)?
            + ssm_scan(&self.backward_ssm, xs.view(), ScanDirection::Backward)?;
        Ok(self.head(&y, &z))
    }

    pub fn forward_recorded(&self, seq: ArrayView2<f64>) -> Result<(Array2<f64>, BlockTape), NnError> {
        self.check(&seq)?;
        let x = seq.dot(&self.w_in_x.t());
        let z = seq.dot(&self.w_in_z.t());
        let conv_out = self.depthwise_conv(&x);
        let xs = conv_out.mapv(silu);
        let (yf, fwd) = ssm_scan_recorded(&self.forward_ssm, xs.view(), ScanDirection::Forward)?;
        let (yb, bwd) = ssm_scan_recorded(&self.backward_ssm, xs.view(), ScanDirection::Backward)?;
        let y = yf + yb;
        let out = self.head(&y, &z);
        let tape = BlockTape {
            input: seq.to_owned(),
            x,
            conv_out,
            z,
            y,
            fwd,
            bwd,
        };
        Ok((out, tape))
    }

    /// Returns parameter gradients (shaped like `self`) and the gradient with
    /// respect to the block input.
    pub fn backward(&self, tape: &BlockTape, d_out: ArrayView2<f64>) -> Result<(RsalBlock, Array2<f64>), NnError> {
        let len = tape.input.nrows();
        if d_out.dim() != (len, self.out_dim()) {
            return Err(NnError::DimMismatch(format!(
                "upstream gradient {:?} vs block output {:?}",
                d_out.dim(),
                (len, self.out_dim())
            )));
        }
        let sz = tape.z.mapv(silu);
        let gated = &tape.y * &sz;
        let d_w_out = d_out.t().dot(&gated);
        let d_b_out = d_out.sum_axis(Axis(0));
        let d_gated = d_out.dot(&self.w_out);

        let d_y = &d_gated * &sz;
        let mut d_z = &d_gated * &tape.y;
        d_z.zip_mut_with(&tape.z, |g, &v| *g *= silu_grad(v));

        let (g_fwd, dxs_f) = ssm_scan_backward(&self.forward_ssm, &tape.fwd, d_y.view())?;
        let (g_bwd, dxs_b) = ssm_scan_backward(&self.backward_ssm, &tape.bwd, d_y.view())?;
        let mut d_conv_out = dxs_f + dxs_b;
        d_conv_out.zip_mut_with(&tape.conv_out, |g, &v| *g *= silu_grad(v));

        let inner = self.inner_dim();
        let mut d_conv = Array2::zeros((inner, 3));
        let mut d_x = Array2::zeros((len, inner));
        for t in 0..len {
            for d in 0..inner {
                let g = d_conv_out[[t, d]];
                d_conv[[d, 1]] += g * tape.x[[t, d]];
                d_x[[t, d]] += g * self.conv[[d, 1]];
                if t > 0 {
                    d_conv[[d, 0]] += g * tape.x[[t - 1, d]];
                    d_x[[t - 1, d]] += g * self.conv[[d, 0]];
                }
                if t + 1 < len {
                    d_conv[[d, 2]] += g * tape.x[[t + 1, d]];
                    d_x[[t + 1, d]] += g * self.conv[[d, 2]];
                }
            }
        }

        let grads = RsalBlock {
            w_in_x: d_x.t().dot(&tape.input),
            w_in_z: d_z.t().dot(&tape.input),
            conv: d_conv,
            forward_ssm: g_fwd,
            backward_ssm: g_bwd,
            w_out: d_w_out,
            b_out: d_b_out,
        };
        let d_in = d_x.dot(&self.w_in_x) + d_z.dot(&self.w_in_z);
        Ok((grads, d_in))
    }
}

impl Parameters for RsalBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        visit_array(format!("{prefix}w_in_x"), &self.w_in_x, f);
        visit_array(format!("{prefix}w_in_z"), &self.w_in_z, f);
        visit_array(format!("{prefix}conv"), &self.conv, f);
        self.forward_ssm.visit(&format!("{prefix}forward_ssm."), f);
        self.backward_ssm.visit(&format!("{prefix}backward_ssm."), f);
        visit_array(format!("{prefix}w_out"), &self.w_out, f);
        visit_array(format!("{prefix}b_out"), &self.b_out, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        visit_array_mut(&mut self.w_in_x, f);
        visit_array_mut(&mut self.w_in_z, f);
        visit_array_mut(&mut self.conv, f);
        self.forward_ssm.visit_mut(f);
        self.backward_ssm.visit_mut(f);
        visit_array_mut(&mut self.w_out, f);
        visit_array_mut(&mut self.b_out, f);
    }
}
