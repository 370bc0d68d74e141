//! Selective scan: a diagonal SSM whose `B`, `C` and step size depend on the
//! current input.
//!
//! For every step `t` (visited in scan direction) and channel `d`:
//!
//! ```text
//! B_t = W_B u_t            C_t = W_C u_t            delta_t = softplus(W_delta u_t + b_delta)
//! h_t[d, :] = exp(delta_t[d] A[d, :]) * h_{t-1}[d, :] + bbar(A[d, :], B_t, delta_t[d]) * u_t[d]
//! y_t[d]    = <C_t, h_t[d, :]> + u_t[d]
//! ```
//!
//! `A = -exp(a_log)` keeps every diagonal entry strictly negative.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::discretize::{phi, phi_prime};
use super::params::{visit_array, visit_array_mut, Parameters};
use super::{sigmoid, softplus, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanDirection {
    Forward,
    Backward,
}

impl ScanDirection {
    #[inline]
    fn index(self, step: usize, len: usize) -> usize {
        match self {
            ScanDirection::Forward => step,
            ScanDirection::Backward => len - 1 - step,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams {
    /// `D x N`; the state matrix is `A = -exp(a_log)`.
    pub a_log: Array2<f64>,
    /// `N x D`
    pub w_b: Array2<f64>,
    /// `N x D`
    pub w_c: Array2<f64>,
    /// `D x D`
    pub w_delta: Array2<f64>,
    pub b_delta: Array1<f64>,
}

impl SsmParams {
    pub fn zeros(channels: usize, state_dim: usize) -> Self {
        Self {
            a_log: Array2::zeros((channels, state_dim)),
            w_b: Array2::zeros((state_dim, channels)),
            w_c: Array2::zeros((state_dim, channels)),
            w_delta: Array2::zeros((channels, channels)),
            b_delta: Array1::zeros(channels),
        }
    }

    /// `A[d, n] = -(n + 1)`, uniform fan-in projections and a step-size bias
    /// placing `softplus(b_delta)` log-uniformly in `[1e-3, 1e-1]`.
    pub fn init<R: Rng + ?Sized>(channels: usize, state_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (channels as f64).sqrt();
        let mut uniform = |shape: (usize, usize)| Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..bound));
        let w_b = uniform((state_dim, channels));
        let w_c = uniform((state_dim, channels));
        let w_delta = uniform((channels, channels));
        let b_delta = Array1::from_shape_simple_fn(channels, || {
            let dt = rng.random_range(1e-3f64.ln()..1e-1f64.ln()).exp();
            dt + (-(-dt).exp_m1()).ln()
        });
        Self {
            a_log: Array2::from_shape_fn((channels, state_dim), |(_, n)| ((n + 1) as f64).ln()),
            w_b,
            w_c,
            w_delta,
            b_delta,
        }
    }

    pub fn channels(&self) -> usize {
        self.a_log.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.a_log.ncols()
    }

    /// The (negative) diagonal state matrix, `D x N`.
    pub fn a(&self) -> Array2<f64> {
        self.a_log.mapv(|v| -v.exp())
    }
}

impl Parameters for SsmParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        visit_array(format!("{prefix}a_log"), &self.a_log, f);
        visit_array(format!("{prefix}w_b"), &self.w_b, f);
        visit_array(format!("{prefix}w_c"), &self.w_c, f);
        visit_array(format!("{prefix}w_delta"), &self.w_delta, f);
        visit_array(format!("{prefix}b_delta"), &self.b_delta, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        visit_array_mut(&mut self.a_log, f);
        visit_array_mut(&mut self.w_b, f);
        visit_array_mut(&mut self.w_c, f);
        visit_array_mut(&mut self.w_delta, f);
        visit_array_mut(&mut self.b_delta, f);
    }
}

/// Intermediates of one recorded scan.
#[derive(Debug, Clone)]
pub struct ScanTape {
    direction: ScanDirection,
    input: Array2<f64>,
    pre_delta: Array2<f64>,
    delta: Array2<f64>,
    b: Array2<f64>,
    c: Array2<f64>,
    segment: usize,
    /// Hidden state before the first step of every segment, `D*N` each.
    checkpoints: Vec<Vec<f64>>,
}

struct Projected {
    pre_delta: Array2<f64>,
    delta: Array2<f64>,
    b: Array2<f64>,
    c: Array2<f64>,
}

fn project(params: &SsmParams, u: ArrayView2<f64>) -> Projected {
    let mut pre_delta = u.dot(&params.w_delta.t());
    pre_delta += &params.b_delta;
    let delta = pre_delta.mapv(softplus);
    Projected {
        pre_delta,
        delta,
        b: u.dot(&params.w_b.t()),
        c: u.dot(&params.w_c.t()),
    }
}

fn check_input(params: &SsmParams, seq: &ArrayView2<f64>) -> Result<(), NnError> {
    if seq.nrows() == 0 {
        return Err(NnError::EmptySequence);
    }
    if seq.ncols() != params.channels() {
        return Err(NnError::DimMismatch(format!(
            "scan expects {} channels, got {}",
            params.channels(),
            seq.ncols()
        )));
    }
    Ok(())
}

/// Checkpoint spacing for a sequence of `len` steps.
fn segment_len(len: usize) -> usize {
    ((len as f64).sqrt().ceil() as usize).max(32)
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn step(
    a: &[f64],
    n_state: usize,
    delta: &[f64],
    b: &[f64],
    c: &[f64],
    u: &[f64],
    h: &mut [f64],
    y: &mut [f64],
) {
    for d in 0..u.len() {
        let (dd, x) = (delta[d], u[d]);
        let row = d * n_state;
        let mut acc = 0.0;
        for n in 0..n_state {
            let z = dd * a[row + n];
            let abar = z.exp();
            let bbar = dd * b[n] * phi(z, abar);
            let hv = abar * h[row + n] + bbar * x;
            h[row + n] = hv;
            acc += c[n] * hv;
        }
        y[d] = acc + x;
    }
}

fn scan_impl(
    params: &SsmParams,
    seq: ArrayView2<f64>,
    direction: ScanDirection,
    record: bool,
) -> Result<(Array2<f64>, Option<ScanTape>), NnError> {
    check_input(params, &seq)?;
    let (len, ch, ns) = (seq.nrows(), params.channels(), params.state_dim());
    let u = seq.as_standard_layout().into_owned();
    let proj = project(params, u.view());
    let a = params.a();
    let a = a.as_slice().unwrap();
    let (us, ds, bs, cs) = (
        u.as_slice().unwrap(),
        proj.delta.as_slice().unwrap(),
        proj.b.as_slice().unwrap(),
        proj.c.as_slice().unwrap(),
    );

    let segment = segment_len(len);
    let mut checkpoints = Vec::new();
    let mut h = vec![0.0; ch * ns];
    let mut y = Array2::zeros((len, ch));
    {
        let ys = y.as_slice_mut().unwrap();
        for s in 0..len {
            if record && s % segment == 0 {
                checkpoints.push(h.clone());
            }
            let t = direction.index(s, len);
            step(
                a,
                ns,
                &ds[t * ch..(t + 1) * ch],
                &bs[t * ns..(t + 1) * ns],
                &cs[t * ns..(t + 1) * ns],
                &us[t * ch..(t + 1) * ch],
                &mut h,
                &mut ys[t * ch..(t + 1) * ch],
            );
        }
    }
    let tape = record.then(|| ScanTape {
        direction,
        input: u,
        pre_delta: proj.pre_delta,
        delta: proj.delta,
        b: proj.b,
        c: proj.c,
        segment,
        checkpoints,
    });
    Ok((y, tape))
}

/// Runs the scan over a `T x D` sequence; output rows align with input rows
/// whatever the direction.
pub fn ssm_scan(params: &SsmParams, seq: ArrayView2<f64>, direction: ScanDirection) -> Result<Array2<f64>, NnError> {
    Ok(scan_impl(params, seq, direction, false)?.0)
}

/// Like [`ssm_scan`] but keeps what [`ssm_scan_backward`] needs.
pub fn ssm_scan_recorded(
    params: &SsmParams,
    seq: ArrayView2<f64>,
    direction: ScanDirection,
) -> Result<(Array2<f64>, ScanTape), NnError> {
    let (y, tape) = scan_impl(params, seq, direction, true)?;
    Ok((y, tape.expect("recorded")))
}

/// Backpropagates `dy` (`T x D`) through a recorded scan. Returns parameter
/// gradients (shaped like `params`) and the gradient with respect to the
/// input sequence.
pub fn ssm_scan_backward(
    params: &SsmParams,
    tape: &ScanTape,
    dy: ArrayView2<f64>,
) -> Result<(SsmParams, Array2<f64>), NnError> {
    let (len, ch) = tape.input.dim();
    let ns = params.state_dim();
    if dy.dim() != (len, ch) {
        return Err(NnError::DimMismatch(format!(
            "upstream gradient {:?} vs scan output {:?}",
            dy.dim(),
            (len, ch)
        )));
    }
    let dy = dy.as_standard_layout();
    let dys = dy.as_slice().unwrap();
    let a_arr = params.a();
    let a = a_arr.as_slice().unwrap();
    let us = tape.input.as_slice().unwrap();
    let ds = tape.delta.as_slice().unwrap();
    let bs = tape.b.as_slice().unwrap();
    let cs = tape.c.as_slice().unwrap();

    let mut du = Array2::<f64>::zeros((len, ch));
    let mut d_delta = Array2::<f64>::zeros((len, ch));
    let mut d_b = Array2::<f64>::zeros((len, ns));
    let mut d_c = Array2::<f64>::zeros((len, ns));
    let mut d_a = vec![0.0; ch * ns];
    let mut carry = vec![0.0; ch * ns];

    let dn = ch * ns;
    let seg = tape.segment;
    let mut hs = vec![0.0; (seg + 1) * dn];
    let mut abars = vec![0.0; seg * dn];
    let mut phis = vec![0.0; seg * dn];
    {
        let dus = du.as_slice_mut().unwrap();
        let dds = d_delta.as_slice_mut().unwrap();
        let dbs = d_b.as_slice_mut().unwrap();
        let dcs = d_c.as_slice_mut().unwrap();
        for (k, start_h) in tape.checkpoints.iter().enumerate().rev() {
            let s0 = k * seg;
            let s1 = (s0 + seg).min(len);
            // replay the segment, keeping every state and discretization
            hs[..dn].copy_from_slice(start_h);
            for s in s0..s1 {
                let t = tape.direction.index(s, len);
                let i = s - s0;
                let (prev, cur) = hs[i * dn..(i + 2) * dn].split_at_mut(dn);
                for d in 0..ch {
                    let dd = ds[t * ch + d];
                    let x = us[t * ch + d];
                    for n in 0..ns {
                        let j = d * ns + n;
                        let z = dd * a[j];
                        let abar = z.exp();
                        let ph = phi(z, abar);
                        abars[i * dn + j] = abar;
                        phis[i * dn + j] = ph;
                        cur[j] = abar * prev[j] + dd * bs[t * ns + n] * ph * x;
                    }
                }
            }
            for s in (s0..s1).rev() {
                let t = tape.direction.index(s, len);
                let i = s - s0;
                let prev = &hs[i * dn..(i + 1) * dn];
                let cur = &hs[(i + 1) * dn..(i + 2) * dn];
                let brow = &bs[t * ns..(t + 1) * ns];
                let crow = &cs[t * ns..(t + 1) * ns];
                for d in 0..ch {
                    let g = dys[t * ch + d];
                    let dd = ds[t * ch + d];
                    let x = us[t * ch + d];
                    let mut du_d = g;
                    let mut ddelta = 0.0;
                    for n in 0..ns {
                        let j = d * ns + n;
                        let (abar, ph, an, bn) = (abars[i * dn + j], phis[i * dn + j], a[j], brow[n]);
                        dcs[t * ns + n] += g * cur[j];
                        let dh = carry[j] + g * crow[n];
                        let dabar = dh * prev[j];
                        let dbbar = dh * x;
                        du_d += dh * dd * bn * ph;
                        carry[j] = dh * abar;
                        ddelta += dabar * abar * an + dbbar * bn * abar;
                        d_a[j] += dabar * abar * dd + dbbar * bn * dd * dd * phi_prime(dd * an, abar);
                        dbs[t * ns + n] += dbbar * dd * ph;
                    }
                    dus[t * ch + d] += du_d;
                    dds[t * ch + d] = ddelta;
                }
            }
        }
    }

    let mut d_pre = d_delta;
    d_pre.zip_mut_with(&tape.pre_delta, |g, &p| *g *= sigmoid(p));
    let u = &tape.input;
    let grads = SsmParams {
        a_log: Array2::from_shape_vec((ch, ns), d_a).unwrap() * &a_arr,
        w_b: d_b.t().dot(u),
        w_c: d_c.t().dot(u),
        w_delta: d_pre.t().dot(u),
        b_delta: d_pre.sum_axis(Axis(0)),
    };
    du += &d_pre.dot(&params.w_delta);
    du += &d_b.dot(&params.w_b);
    du += &d_c.dot(&params.w_c);
    Ok((grads, du))
}
