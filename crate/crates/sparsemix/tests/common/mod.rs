//! Shared fixtures for the integration suites: a planted three-group
//! generative model and the end-to-end subset-init + train pipeline.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use sparsemix::dataio::apply_random_masks;
use sparsemix::grad::AttentionGrad;
use sparsemix::init::{initialize, InitMethod};
use sparsemix::metrics::acc;
use sparsemix::model::{Dataset, HyperParams, MixtureModel, PriorMode, Solver, StepMode};
use sparsemix::numkernel::Matrix;
use sparsemix::objective::cluster_dataset;
use sparsemix::trainer::{train, TrainConfig};

/// Pipeline seeds used by the end-to-end criteria.
pub const PIPELINE_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Three-group generative model whose dictionaries combine a dominant
/// component on a private 5-row support with a smaller dense component
/// shared across all rows. The private supports keep the groups
/// near-orthogonal (subset clustering finds them), while the dense overlap
/// keeps every dictionary weakly responsive to every group so gradient
/// training can reassign a poorly initialized dictionary.
pub fn planted_model() -> MixtureModel {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (k, m, d) = (3usize, 20usize, 5usize);
    let (scale, jitter, mix): (f64, f64, f64) = (6.0, 0.45, 0.4);
    let dicts = (0..k)
        .map(|cluster| {
            let mut base: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() - 0.5).collect();
            let norm = base.iter().map(|x| x * x).sum::<f64>().sqrt();
            for b in base.iter_mut() {
                *b /= norm;
            }
            let cols: Vec<Vec<f64>> = (0..d)
                .map(|_| {
                    let mut block: Vec<f64> = base
                        .iter()
                        .map(|&b| b + jitter * (rng.gen::<f64>() - 0.5) * 2.0)
                        .collect();
                    let bn = block.iter().map(|x| x * x).sum::<f64>().sqrt();
                    for v in block.iter_mut() {
                        *v /= bn;
                    }
                    let mut dense: Vec<f64> =
                        (0..m).map(|_| rand_distr::StandardNormal.sample(&mut rng)).collect();
                    let dn = dense.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
                    for v in dense.iter_mut() {
                        *v /= dn;
                    }
                    let mut col = vec![0.0; m];
                    for (r, c) in col.iter_mut().enumerate() {
                        let in_support = r >= 5 * cluster && r < 5 * (cluster + 1);
                        let b = if in_support { block[r - 5 * cluster] } else { 0.0 };
                        *c = (1.0 - mix * mix).sqrt() * b + mix * dense[r];
                    }
                    let cn = col.iter().map(|x| x * x).sum::<f64>().sqrt();
                    for v in col.iter_mut() {
                        *v /= cn;
                    }
                    col
                })
                .collect();
            Matrix::from_fn(m, d, |row, col| scale * cols[col][row])
        })
        .collect();
    let hyper = HyperParams {
        clusters: k,
        data_dim: m,
        atoms: d,
        sparsity: 1.0,
        step_size: 0.0,
        step_mode: StepMode::Auto,
        iters: 15,
        solver: Solver::Fista,
    };
    MixtureModel::new(hyper, dicts, vec![-(k as f64).ln(); k], PriorMode::Fixed).unwrap()
}

pub struct PipelineRun {
    pub init_acc: f64,
    pub final_acc: f64,
    pub first_loss: f64,
    pub last_loss: f64,
}

fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 10,
        batch_size: 8,
        lr: 0.05,
        seed: 1 + seed,
        shuffle: true,
        attention: AttentionGrad::Full,
        eval_every: 0,
    }
}

/// 600 samples, subset-of-200 kmeans init, 10 training epochs. `sparsity`
/// overrides the fitted model's penalty (the data always comes from the
/// planted λ=1 model); `masked` drops 25% of coordinates on 90% of samples.
pub fn run_pipeline(truth: &MixtureModel, seed: u64, sparsity: f64, masked: bool) -> PipelineRun {
    let clean = truth.sample_dataset(600, 2024 + seed).unwrap();
    let data: Dataset = if masked {
        apply_random_masks(&clean, 0.9, 0.25, 4242 + seed).unwrap()
    } else {
        clean
    };
    let labels: Vec<usize> = data.labels().unwrap().to_vec();
    let mut hyper = truth.hyper;
    hyper.sparsity = sparsity;
    let init =
        initialize(&data, &hyper, PriorMode::Fixed, InitMethod::Kmeans, 200, 7 + seed).unwrap();
    let init_acc = acc(&cluster_dataset(&data, &init.model).unwrap().hard_labels(), &labels).unwrap();
    let out = train(&data, &init.model, &train_config(seed)).unwrap();
    assert!(out.diverged.is_none(), "training diverged: {:?}", out.diverged);
    let final_acc =
        acc(&cluster_dataset(&data, &out.model).unwrap().hard_labels(), &labels).unwrap();
    PipelineRun {
        init_acc,
        final_acc,
        first_loss: out.history.first().unwrap().mean_loss,
        last_loss: out.history.last().unwrap().mean_loss,
    }
}
