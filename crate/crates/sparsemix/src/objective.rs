//! Per-cluster energies, the softmax attention over them, and the training
//! loss. A sample's energy under cluster k is
//!
//!   E_k = ||y - A_k x_k||^2 + sparsity * ||x_k||_1 - log pi_k
//!
//! with the reconstruction term restricted to observed coordinates for
//! masked samples. Cluster weights are softmax(-E) and the per-sample loss
//! is the weighted energy sum; a batch averages per-sample losses.

use std::io::Write;

use rayon::prelude::*;

use crate::encoder::{encode_with, resolve_step, EncodeResult, SolveParams};
use crate::model::{Dataset, MixtureModel, SampleView};
use crate::numkernel::{l1_norm, softmax_neg};
use crate::{Error, Result};

/// Energy of a sample under every cluster, with its decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyVector {
    /// Masked squared reconstruction error per cluster.
    pub recon: Vec<f64>,
    /// sparsity * ||code||_1 per cluster.
    pub reg: Vec<f64>,
    /// -log pi_k per cluster.
    pub bias: Vec<f64>,
    /// recon + reg + bias, the value the attention sees.
    pub total: Vec<f64>,
}

impl EnergyVector {
    pub fn clusters(&self) -> usize {
        self.total.len()
    }
}

/// Soft cluster weights plus the arg-min hard label.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub weights: Vec<f64>,
    pub hard_label: usize,
}

/// Step size per dictionary, resolved once so auto mode does not rerun
/// power iteration for every sample.
pub fn resolve_steps(model: &MixtureModel) -> Vec<f64> {
    model
        .dictionaries
        .iter()
        .map(|a| resolve_step(a, &model.hyper))
        .collect()
}

/// Energies for one sample given its per-cluster codes.
pub fn energies(
    sample: SampleView<'_>,
    model: &MixtureModel,
    codes: &[EncodeResult],
) -> Result<EnergyVector> {
    let k = model.hyper.clusters;
    if codes.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "{} codes for {} clusters",
            codes.len(),
            k
        )));
    }
    if sample.values.len() != model.hyper.data_dim {
        return Err(Error::ShapeMismatch(format!(
            "sample length {} vs data_dim {}",
            sample.values.len(),
            model.hyper.data_dim
        )));
    }
    let mut recon = Vec::with_capacity(k);
    let mut reg = Vec::with_capacity(k);
    let mut bias = Vec::with_capacity(k);
    let mut total = Vec::with_capacity(k);
    let mut ax = vec![0.0; model.hyper.data_dim];
    for (i, code) in codes.iter().enumerate() {
        if code.code.len() != model.hyper.atoms {
            return Err(Error::ShapeMismatch(format!(
                "code {} has {} atoms, expected {}",
                i,
                code.code.len(),
                model.hyper.atoms
            )));
        }
        model.dictionaries[i].matvec_into(&code.code, &mut ax);
        let mut quad = 0.0;
        for (j, (&y, &a)) in sample.values.iter().zip(ax.iter()).enumerate() {
            if sample.mask.is_none_or(|m| m[j]) {
                let r = y - a;
                quad += r * r;
            }
        }
        let r = quad;
        let g = model.hyper.sparsity * l1_norm(&code.code);
        let b = -model.log_prior[i];
        recon.push(r);
        reg.push(g);
        bias.push(b);
        total.push(r + g + b);
    }
    Ok(EnergyVector { recon, reg, bias, total })
}

/// Attention weights over clusters and the hard label. Ties in the energy
/// minimum resolve to the lowest cluster index.
pub fn posterior(e: &EnergyVector) -> Assignment {
    let weights = softmax_neg(&e.total);
    let mut hard = 0;
    for (i, &v) in e.total.iter().enumerate() {
        if v < e.total[hard] {
            hard = i;
        }
    }
    Assignment { weights, hard_label: hard }
}

/// Per-sample loss: energies weighted by their own softmax attention.
pub fn loss(e: &EnergyVector) -> f64 {
    let w = softmax_neg(&e.total);
    w.iter().zip(&e.total).map(|(wi, ei)| wi * ei).sum()
}

pub fn mean_loss(losses: &[f64]) -> f64 {
    if losses.is_empty() {
        return 0.0;
    }
    losses.iter().sum::<f64>() / losses.len() as f64
}

/// Everything the backward pass needs about one sample's forward run.
#[derive(Clone, Debug)]
pub struct SampleForward {
    pub codes: Vec<EncodeResult>,
    pub energies: EnergyVector,
    pub assignment: Assignment,
}

impl SampleForward {
    pub fn loss(&self) -> f64 {
        self.assignment
            .weights
            .iter()
            .zip(&self.energies.total)
            .map(|(w, e)| w * e)
            .sum()
    }
}

/// Encodes a sample against every dictionary and bundles the artifacts.
/// `steps` must come from [`resolve_steps`] on the same model.
pub fn forward_sample(
    sample: SampleView<'_>,
    model: &MixtureModel,
    steps: &[f64],
) -> Result<SampleForward> {
    if steps.len() != model.hyper.clusters {
        return Err(Error::ShapeMismatch(format!(
            "{} step sizes for {} clusters",
            steps.len(),
            model.hyper.clusters
        )));
    }
    let mut codes = Vec::with_capacity(model.hyper.clusters);
    for (k, a) in model.dictionaries.iter().enumerate() {
        let params = SolveParams {
            sparsity: model.hyper.sparsity,
            step: steps[k],
            iters: model.hyper.iters,
            solver: model.hyper.solver,
        };
        codes.push(encode_with(sample.values, sample.mask, a, &params)?);
    }
    let e = energies(sample, model, &codes)?;
    let assignment = posterior(&e);
    Ok(SampleForward { codes, energies: e, assignment })
}

/// Full-dataset clustering output with per-sample diagnostics.
#[derive(Clone, Debug)]
pub struct ClusteringReport {
    pub assignments: Vec<Assignment>,
    /// Per sample, per cluster: reconstruction MSE (recon / data_dim).
    pub mse: Vec<Vec<f64>>,
    /// Per sample, per cluster: nonzero count of the code.
    pub code_nnz: Vec<Vec<usize>>,
    pub mean_loss: f64,
}

impl ClusteringReport {
    pub fn hard_labels(&self) -> Vec<usize> {
        self.assignments.iter().map(|a| a.hard_label).collect()
    }
}

/// Per-sample clustering artifacts: assignment, per-cluster MSE,
/// per-cluster nonzero count, loss.
type SampleRow = (Assignment, Vec<f64>, Vec<usize>, f64);

/// Clusters every sample in the dataset. Work is sample-parallel with
/// indexed writes, so results do not depend on the thread count.
pub fn cluster_dataset(data: &Dataset, model: &MixtureModel) -> Result<ClusteringReport> {
    model.ensure_valid()?;
    if data.dim() != model.hyper.data_dim {
        return Err(Error::ShapeMismatch(format!(
            "dataset dim {} vs model data_dim {}",
            data.dim(),
            model.hyper.data_dim
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot cluster an empty dataset".into()));
    }
    let steps = resolve_steps(model);
    let m = model.hyper.data_dim as f64;
    let rows: Vec<Result<SampleRow>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let fwd = forward_sample(data.get(i), model, &steps)?;
            let mse: Vec<f64> = fwd.energies.recon.iter().map(|r| r / m).collect();
            let nnz: Vec<usize> = fwd
                .codes
                .iter()
                .map(|c| c.code.iter().filter(|v| **v != 0.0).count())
                .collect();
            let l = fwd.loss();
            Ok((fwd.assignment, mse, nnz, l))
        })
        .collect();
    let mut assignments = Vec::with_capacity(data.len());
    let mut mse = Vec::with_capacity(data.len());
    let mut code_nnz = Vec::with_capacity(data.len());
    let mut losses = Vec::with_capacity(data.len());
    for row in rows {
        let (a, e, n, l) = row?;
        assignments.push(a);
        mse.push(e);
        code_nnz.push(n);
        losses.push(l);
    }
    Ok(ClusteringReport {
        assignments,
        mse,
        code_nnz,
        mean_loss: mean_loss(&losses),
    })
}

/// CSV rows: sample index, hard label, then K weights, K MSEs, K nonzero
/// counts.
pub fn write_report_csv<W: Write>(report: &ClusteringReport, out: &mut W) -> Result<()> {
    let k = report
        .assignments
        .first()
        .map(|a| a.weights.len())
        .unwrap_or(0);
    write!(out, "sample_index,hard_label")?;
    for i in 0..k {
        write!(out, ",weight_{i}")?;
    }
    for i in 0..k {
        write!(out, ",mse_{i}")?;
    }
    for i in 0..k {
        write!(out, ",nnz_{i}")?;
    }
    writeln!(out)?;
    for (idx, a) in report.assignments.iter().enumerate() {
        write!(out, "{},{}", idx, a.hard_label)?;
        for w in &a.weights {
            write!(out, ",{w}")?;
        }
        for e in &report.mse[idx] {
            write!(out, ",{e}")?;
        }
        for n in &report.code_nnz[idx] {
            write!(out, ",{n}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
