//! Reverse-mode gradients of the batch loss with respect to the dictionaries
//! and (optionally) the prior logits, plus the Adam update.
//!
//! For one sample with energies E and attention weights w = softmax(-E),
//! differentiating the loss L = sum_k w_k E_k through the attention gives
//! dL/dE_j = w_j (1 + L - E_j); the stop-gradient variant treats w as
//! constant, leaving dL/dE_j = w_j. Each energy then feeds two paths into
//! its dictionary: the decoder term -2 (y - A x) x^T with the code held
//! fixed, and the chain back through every unrolled encoder iteration, where
//! the same matrix appears in the gradient step. Both are accumulated; the
//! soft-threshold derivative is the indicator |pre-threshold| > eta*sparsity
//! (zero exactly at the kink) and the momentum scalars are treated as
//! constants.

use rayon::prelude::*;

use crate::encoder::EncodeResult;
use crate::model::{renormalize_log_prior, Dataset, MixtureModel, PriorMode};
use crate::numkernel::{soft_threshold_scalar, Matrix};
use crate::objective::SampleForward;
use crate::{Error, Result};

/// Whether gradients flow through the attention weights or treat them as
/// constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionGrad {
    Full,
    Stop,
}

impl std::str::FromStr for AttentionGrad {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(AttentionGrad::Full),
            "stop" => Ok(AttentionGrad::Stop),
            other => Err(Error::InvalidArgument(format!(
                "unknown attention gradient mode '{other}' (expected full or stop)"
            ))),
        }
    }
}

/// Gradients shaped like the trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub d_dictionaries: Vec<Matrix>,
    /// Gradient of the prior logits; all zero when the prior is fixed.
    pub d_log_prior: Vec<f64>,
}

impl GradientSet {
    pub fn zeros(model: &MixtureModel) -> Self {
        GradientSet {
            d_dictionaries: (0..model.hyper.clusters)
                .map(|_| Matrix::zeros(model.hyper.data_dim, model.hyper.atoms))
                .collect(),
            d_log_prior: vec![0.0; model.hyper.clusters],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_dictionaries.iter().all(|m| m.is_finite())
            && self.d_log_prior.iter().all(|v| v.is_finite())
    }
}

/// Mean gradient of the per-sample losses over a batch. `forwards[i]` must
/// be the forward artifacts of `data` sample `indices[i]` computed with the
/// same `steps`. Work is cluster-parallel; each cluster walks samples in
/// order, so results are independent of the thread count.
pub fn backward(
    data: &Dataset,
    indices: &[usize],
    model: &MixtureModel,
    forwards: &[SampleForward],
    steps: &[f64],
    mode: AttentionGrad,
) -> Result<GradientSet> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if forwards.len() != indices.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} forward artifacts for {} samples",
            forwards.len(),
            indices.len()
        )));
    }
    if steps.len() != model.hyper.clusters {
        return Err(Error::ShapeMismatch(format!(
            "{} step sizes for {} clusters",
            steps.len(),
            model.hyper.clusters
        )));
    }
    let k = model.hyper.clusters;
    let inv_b = 1.0 / indices.len() as f64;
    // dL/dE per sample and cluster, batch-mean factor included.
    let energy_grads: Vec<Vec<f64>> = forwards
        .iter()
        .map(|fwd| {
            let e = &fwd.energies.total;
            let w = &fwd.assignment.weights;
            match mode {
                AttentionGrad::Full => {
                    let l: f64 = w.iter().zip(e).map(|(wi, ei)| wi * ei).sum();
                    // (l - ei) first: for a single cluster it cancels exactly,
                    // making full and stop-gradient modes agree bit for bit.
                    w.iter().zip(e).map(|(wi, ei)| wi * (1.0 + (l - ei)) * inv_b).collect()
                }
                AttentionGrad::Stop => w.iter().map(|wi| wi * inv_b).collect(),
            }
        })
        .collect();

    let d_dictionaries: Vec<Matrix> = (0..k)
        .into_par_iter()
        .map(|cluster| {
            let a = &model.dictionaries[cluster];
            let mut da = Matrix::zeros(a.rows(), a.cols());
            let mut scratch = ClusterScratch::new(a.rows(), a.cols());
            for (i, &sample_idx) in indices.iter().enumerate() {
                let g = energy_grads[i][cluster];
                if g == 0.0 {
                    continue;
                }
                accumulate_energy_grad(
                    data.sample(sample_idx),
                    data.mask(sample_idx),
                    a,
                    &forwards[i].codes[cluster],
                    steps[cluster],
                    model.hyper.sparsity,
                    g,
                    &mut da,
                    &mut scratch,
                );
            }
            da
        })
        .collect();

    let mut d_log_prior = vec![0.0; k];
    if model.prior_mode == PriorMode::Learnable {
        let prior = model.prior();
        for grads in &energy_grads {
            let total: f64 = grads.iter().sum();
            for j in 0..k {
                // d(-log pi_c)/d logit_j = -delta_cj + pi_j under the softmax
                // parameterization.
                d_log_prior[j] += -grads[j] + prior[j] * total;
            }
        }
    }
    Ok(GradientSet { d_dictionaries, d_log_prior })
}

/// [`backward`] with the attention weights treated as constants.
pub fn backward_stopgrad_attention(
    data: &Dataset,
    indices: &[usize],
    model: &MixtureModel,
    forwards: &[SampleForward],
    steps: &[f64],
) -> Result<GradientSet> {
    backward(data, indices, model, forwards, steps, AttentionGrad::Stop)
}

/// Reusable buffers for one cluster's backward sweep.
struct ClusterScratch {
    iterates: Vec<Vec<f64>>,
    bars: Vec<Vec<f64>>,
    z: Vec<f64>,
    resid: Vec<f64>,
    av: Vec<f64>,
    atv: Vec<f64>,
    ubar: Vec<f64>,
    zbar: Vec<f64>,
}

impl ClusterScratch {
    fn new(rows: usize, cols: usize) -> Self {
        ClusterScratch {
            iterates: Vec::new(),
            bars: Vec::new(),
            z: vec![0.0; cols],
            resid: vec![0.0; rows],
            av: vec![0.0; rows],
            atv: vec![0.0; cols],
            ubar: vec![0.0; cols],
            zbar: vec![0.0; cols],
        }
    }

    fn reset(&mut self, iters: usize, cols: usize) {
        for buf in [&mut self.iterates, &mut self.bars] {
            buf.resize(iters + 1, Vec::new());
            for v in buf.iter_mut() {
                v.clear();
                v.resize(cols, 0.0);
            }
        }
    }
}

/// Adds g * dE/dA for one (sample, cluster) pair into `da`, where
/// E = ||y - A x_L||^2 + sparsity ||x_L||_1 + bias and x_L is the endpoint of
/// the recorded encoder run.
#[allow(clippy::too_many_arguments)]
fn accumulate_energy_grad(
    y: &[f64],
    mask: Option<&[bool]>,
    a: &Matrix,
    enc: &EncodeResult,
    eta: f64,
    sparsity: f64,
    g: f64,
    da: &mut Matrix,
    s: &mut ClusterScratch,
) {
    let iters = enc.trace.len();
    let d = a.cols();
    let alpha = eta * sparsity;
    let two_eta = 2.0 * eta;
    s.reset(iters, d);
    // Rebuild x_0..x_L from the recorded pre-threshold arguments; this is the
    // same scalar op the encoder applied, so the values match bit for bit.
    for l in 1..=iters {
        let u = &enc.trace[l - 1].pre_threshold;
        for (slot, &uj) in s.iterates[l].iter_mut().zip(u) {
            *slot = soft_threshold_scalar(uj, alpha);
        }
    }
    debug_assert_eq!(s.iterates[iters], enc.code);

    // Decoder path: residual at the endpoint.
    let x_l = &s.iterates[iters];
    a.matvec_into(x_l, &mut s.resid);
    masked_residual(y, mask, &mut s.resid);
    da.add_outer(-2.0 * g, &s.resid, x_l);
    // Seed for the encoder sweep: dE/dx_L.
    a.matvec_t_into(&s.resid, &mut s.atv);
    for ((bar, &xj), &tj) in s.bars[iters].iter_mut().zip(x_l).zip(&s.atv) {
        let sign = if xj > 0.0 {
            1.0
        } else if xj < 0.0 {
            -1.0
        } else {
            0.0
        };
        *bar = g * (-2.0 * tj + sparsity * sign);
    }

    for l in (1..=iters).rev() {
        let u = &enc.trace[l - 1].pre_threshold;
        let beta = enc.trace[l - 1].momentum;
        let mut live = false;
        for ((ub, &uj), &bj) in s.ubar.iter_mut().zip(u).zip(&s.bars[l]) {
            let v = if uj.abs() > alpha { bj } else { 0.0 };
            *ub = v;
            live |= v != 0.0;
        }
        if !live {
            continue;
        }
        // Extrapolation point the step was taken from.
        let (x_prev, x_prev2) = (&s.iterates[l - 1], if l >= 2 { &s.iterates[l - 2] } else { &s.iterates[l - 1] });
        for j in 0..d {
            s.z[j] = x_prev[j] + beta * (x_prev[j] - x_prev2[j]);
        }
        a.matvec_into(&s.z, &mut s.resid);
        masked_residual(y, mask, &mut s.resid);
        // u = z + 2 eta A^T (masked residual): A enters through A^T r and
        // through the residual itself.
        da.add_outer(two_eta, &s.resid, &s.ubar);
        a.matvec_into(&s.ubar, &mut s.av);
        if let Some(m) = mask {
            for (v, &keep) in s.av.iter_mut().zip(m) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
        da.add_outer(-two_eta, &s.av, &s.z);
        a.matvec_t_into(&s.av, &mut s.atv);
        for j in 0..d {
            s.zbar[j] = s.ubar[j] - two_eta * s.atv[j];
        }
        let one_plus = 1.0 + beta;
        for j in 0..d {
            s.bars[l - 1][j] += one_plus * s.zbar[j];
        }
        if l >= 2 && beta != 0.0 {
            for j in 0..d {
                s.bars[l - 2][j] -= beta * s.zbar[j];
            }
        }
    }
}

fn masked_residual(y: &[f64], mask: Option<&[bool]>, ax: &mut [f64]) {
    match mask {
        None => {
            for (r, &yi) in ax.iter_mut().zip(y) {
                *r = yi - *r;
            }
        }
        Some(m) => {
            for i in 0..y.len() {
                ax[i] = if m[i] { y[i] - ax[i] } else { 0.0 };
            }
        }
    }
}

/// Bias-corrected Adam over the concatenation of all dictionaries (and the
/// prior logits when learnable).
#[derive(Clone, Debug)]
pub struct AdamState {
    m_dicts: Vec<Matrix>,
    v_dicts: Vec<Matrix>,
    m_prior: Vec<f64>,
    v_prior: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(model: &MixtureModel, lr: f64) -> Self {
        AdamState {
            m_dicts: (0..model.hyper.clusters)
                .map(|_| Matrix::zeros(model.hyper.data_dim, model.hyper.atoms))
                .collect(),
            v_dicts: (0..model.hyper.clusters)
                .map(|_| Matrix::zeros(model.hyper.data_dim, model.hyper.atoms))
                .collect(),
            m_prior: vec![0.0; model.hyper.clusters],
            v_prior: vec![0.0; model.hyper.clusters],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam step; returns the updated model. Refuses non-finite gradients.
pub fn adam_step(
    model: &MixtureModel,
    grads: &GradientSet,
    state: &mut AdamState,
) -> Result<MixtureModel> {
    if grads.d_dictionaries.len() != model.hyper.clusters
        || grads.d_log_prior.len() != model.hyper.clusters
        || state.m_dicts.len() != model.hyper.clusters
    {
        return Err(Error::ShapeMismatch(
            "gradient or optimizer state does not match the model".into(),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric(
            "gradient contains non-finite entries; refusing the update".into(),
        ));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let mut next = model.clone();
    for k in 0..model.hyper.clusters {
        let grad = grads.d_dictionaries[k].data();
        let m = state.m_dicts[k].data_mut();
        let v = state.v_dicts[k].data_mut();
        let p = next.dictionaries[k].data_mut();
        for i in 0..grad.len() {
            let g = grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= state.lr * mhat / (vhat.sqrt() + state.epsilon);
        }
    }
    if model.prior_mode == PriorMode::Learnable {
        for i in 0..model.hyper.clusters {
            let g = grads.d_log_prior[i];
            state.m_prior[i] = state.beta1 * state.m_prior[i] + (1.0 - state.beta1) * g;
            state.v_prior[i] = state.beta2 * state.v_prior[i] + (1.0 - state.beta2) * g * g;
            let mhat = state.m_prior[i] / bc1;
            let vhat = state.v_prior[i] / bc2;
            next.log_prior[i] -= state.lr * mhat / (vhat.sqrt() + state.epsilon);
        }
        // The logits are free parameters; keep the stored prior normalized.
        renormalize_log_prior(&mut next.log_prior);
    }
    Ok(next)
}
