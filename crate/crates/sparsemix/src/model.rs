//! Model and dataset state: hyperparameters, the bank of per-cluster
//! dictionaries with a shared prior, the generative sampler, and binary
//! checkpoint round-tripping.

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numkernel::{logsumexp, Matrix};
use crate::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"MXMT";
const CHECKPOINT_VERSION: u32 = 1;

/// Sparse-solver flavor used inside the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Ista,
    Fista,
}

impl Solver {
    pub fn id(self) -> u8 {
        match self {
            Solver::Ista => 0,
            Solver::Fista => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Solver::Ista),
            1 => Ok(Solver::Fista),
            other => Err(Error::InvalidArgument(format!("unknown solver id {other}"))),
        }
    }
}

impl std::str::FromStr for Solver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ista" => Ok(Solver::Ista),
            "fista" => Ok(Solver::Fista),
            other => Err(Error::InvalidArgument(format!("unknown solver '{other}'"))),
        }
    }
}

/// Fixed step uses `step_size` as given; Auto derives 1/(2 sigma_max^2) per
/// dictionary, which keeps the encoder stable for unnormalized columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepMode {
    Fixed,
    Auto,
}

impl std::str::FromStr for StepMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(StepMode::Fixed),
            "auto" => Ok(StepMode::Auto),
            other => Err(Error::InvalidArgument(format!("unknown step mode '{other}'"))),
        }
    }
}

impl StepMode {
    pub fn id(self) -> u8 {
        match self {
            StepMode::Fixed => 0,
            StepMode::Auto => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(StepMode::Fixed),
            1 => Ok(StepMode::Auto),
            other => Err(Error::InvalidArgument(format!("unknown step mode id {other}"))),
        }
    }
}

/// Whether the cluster prior stays at its initial value or is trained
/// through a softmax parameterization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    Fixed,
    Learnable,
}

impl std::str::FromStr for PriorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(PriorMode::Fixed),
            "learnable" => Ok(PriorMode::Learnable),
            other => Err(Error::InvalidArgument(format!("unknown prior mode '{other}'"))),
        }
    }
}

impl PriorMode {
    pub fn id(self) -> u8 {
        match self {
            PriorMode::Fixed => 0,
            PriorMode::Learnable => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(PriorMode::Fixed),
            1 => Ok(PriorMode::Learnable),
            other => Err(Error::InvalidArgument(format!("unknown prior mode id {other}"))),
        }
    }
}

/// Architecture-level constants shared by every cluster.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Number of clusters / parallel auto-encoders.
    pub clusters: usize,
    /// Ambient data dimension.
    pub data_dim: usize,
    /// Dictionary columns per cluster.
    pub atoms: usize,
    /// L1 penalty weight.
    pub sparsity: f64,
    /// Encoder step size (used when `step_mode` is Fixed).
    pub step_size: f64,
    pub step_mode: StepMode,
    /// Encoder iteration count.
    pub iters: usize,
    pub solver: Solver,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            clusters: 10,
            data_dim: 784,
            atoms: 50,
            sparsity: 0.75,
            step_size: 0.04,
            step_mode: StepMode::Fixed,
            iters: 15,
            solver: Solver::Fista,
        }
    }
}

impl HyperParams {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.clusters == 0 {
            out.push("clusters must be >= 1".to_string());
        }
        if self.data_dim == 0 {
            out.push("data_dim must be >= 1".to_string());
        }
        if self.atoms == 0 {
            out.push("atoms must be >= 1".to_string());
        }
        if !(self.sparsity >= 0.0 && self.sparsity.is_finite()) {
            out.push(format!("sparsity must be finite and >= 0, got {}", self.sparsity));
        }
        if !self.step_size.is_finite() {
            out.push(format!("step_size must be finite, got {}", self.step_size));
        } else if self.step_mode == StepMode::Fixed && self.step_size <= 0.0 {
            out.push(format!(
                "step_size must be > 0 in fixed step mode, got {}",
                self.step_size
            ));
        }
        if self.iters == 0 {
            out.push("iters must be >= 1".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(v.join("; ")))
        }
    }
}

/// Total trainable dictionary entries: clusters * data_dim * atoms.
pub fn param_count(clusters: usize, data_dim: usize, atoms: usize) -> usize {
    clusters * data_dim * atoms
}

/// The full model: one dictionary per cluster plus a log-space prior.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureModel {
    pub hyper: HyperParams,
    pub dictionaries: Vec<Matrix>,
    /// log pi_k; exp of the entries sums to 1.
    pub log_prior: Vec<f64>,
    pub prior_mode: PriorMode,
}

impl MixtureModel {
    pub fn new(
        hyper: HyperParams,
        dictionaries: Vec<Matrix>,
        log_prior: Vec<f64>,
        prior_mode: PriorMode,
    ) -> Result<Self> {
        let model = MixtureModel { hyper, dictionaries, log_prior, prior_mode };
        model.ensure_valid()?;
        Ok(model)
    }

    /// Fresh model with all-zero dictionaries and a uniform prior.
    pub fn uniform(hyper: HyperParams, prior_mode: PriorMode) -> Result<Self> {
        hyper.validate()?;
        let dicts = (0..hyper.clusters)
            .map(|_| Matrix::zeros(hyper.data_dim, hyper.atoms))
            .collect();
        let mut model = MixtureModel {
            hyper,
            dictionaries: dicts,
            log_prior: vec![0.0; hyper.clusters],
            prior_mode,
        };
        model.set_uniform_prior();
        Ok(model)
    }

    /// Reports every violated structural invariant; empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut out = self.hyper.violations();
        if self.dictionaries.len() != self.hyper.clusters {
            out.push(format!(
                "expected {} dictionaries, found {}",
                self.hyper.clusters,
                self.dictionaries.len()
            ));
        }
        for (k, a) in self.dictionaries.iter().enumerate() {
            if a.rows() != self.hyper.data_dim || a.cols() != self.hyper.atoms {
                out.push(format!(
                    "dictionary {} has shape {}x{}, expected {}x{}",
                    k,
                    a.rows(),
                    a.cols(),
                    self.hyper.data_dim,
                    self.hyper.atoms
                ));
            }
            if !a.is_finite() {
                out.push(format!("dictionary {k} contains non-finite entries"));
            }
        }
        if self.log_prior.len() != self.hyper.clusters {
            out.push(format!(
                "log prior has {} entries, expected {}",
                self.log_prior.len(),
                self.hyper.clusters
            ));
        } else if self.log_prior.iter().any(|v| !v.is_finite()) {
            out.push("log prior contains non-finite entries".to_string());
        } else {
            let total: f64 = self.log_prior.iter().map(|v| v.exp()).sum();
            if (total - 1.0).abs() > 1e-9 {
                out.push(format!("prior not normalized: probabilities sum to {total}"));
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidState(v.join("; ")))
        }
    }

    pub fn set_uniform_prior(&mut self) {
        let k = self.hyper.clusters as f64;
        self.log_prior = vec![-(k.ln()); self.hyper.clusters];
    }

    /// Trainable parameters: all dictionary entries, plus the K prior
    /// logits when the prior itself is learnable.
    pub fn param_count(&self) -> usize {
        let dict = param_count(self.hyper.clusters, self.hyper.data_dim, self.hyper.atoms);
        match self.prior_mode {
            PriorMode::Fixed => dict,
            PriorMode::Learnable => dict + self.hyper.clusters,
        }
    }

    pub fn prior(&self) -> Vec<f64> {
        self.log_prior.iter().map(|v| v.exp()).collect()
    }

    /// Draws n labeled samples from the generative process: pick a cluster
    /// from the prior, draw a Laplace code with scale 1/sparsity, decode, and
    /// add unit Gaussian noise.
    pub fn sample_dataset(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.ensure_valid()?;
        if n == 0 {
            return Err(Error::InvalidArgument("cannot sample an empty dataset".into()));
        }
        if self.hyper.sparsity <= 0.0 {
            return Err(Error::InvalidArgument(
                "sampling requires sparsity > 0: the code prior is improper at 0".into(),
            ));
        }
        let scale = 1.0 / self.hyper.sparsity;
        let prior = self.prior();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, d) = (self.hyper.data_dim, self.hyper.atoms);
        let mut values = Vec::with_capacity(n * m);
        let mut labels = Vec::with_capacity(n);
        let mut code = vec![0.0; d];
        let mut y = vec![0.0; m];
        for _ in 0..n {
            let z = sample_categorical(&prior, &mut rng);
            labels.push(z);
            for c in &mut code {
                *c = sample_laplace(scale, &mut rng);
            }
            self.dictionaries[z].matvec_into(&code, &mut y);
            for v in &y {
                let noise: f64 = StandardNormal.sample(&mut rng);
                values.push(v + noise);
            }
        }
        Dataset::new(m, values)?.with_labels(labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.ensure_valid()?;
        let h = &self.hyper;
        let mut buf = Vec::with_capacity(43 + 8 * (self.param_count() + h.clusters));
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        let mut scratch = [0u8; 8];
        LittleEndian::write_u32(&mut scratch[..4], CHECKPOINT_VERSION);
        buf.extend_from_slice(&scratch[..4]);
        for v in [h.clusters, h.data_dim, h.atoms] {
            let v = u32::try_from(v).map_err(|_| {
                Error::InvalidArgument("dimension too large for checkpoint header".into())
            })?;
            LittleEndian::write_u32(&mut scratch[..4], v);
            buf.extend_from_slice(&scratch[..4]);
        }
        for v in [h.sparsity, h.step_size] {
            LittleEndian::write_f64(&mut scratch, v);
            buf.extend_from_slice(&scratch);
        }
        let iters = u32::try_from(h.iters)
            .map_err(|_| Error::InvalidArgument("iters too large for checkpoint header".into()))?;
        LittleEndian::write_u32(&mut scratch[..4], iters);
        buf.extend_from_slice(&scratch[..4]);
        buf.push(h.solver.id());
        buf.push(self.prior_mode.id());
        buf.push(h.step_mode.id());
        for a in &self.dictionaries {
            for &v in a.data() {
                LittleEndian::write_f64(&mut scratch, v);
                buf.extend_from_slice(&scratch);
            }
        }
        for &v in &self.log_prior {
            LittleEndian::write_f64(&mut scratch, v);
            buf.extend_from_slice(&scratch);
        }
        let mut file = fs::File::create(path)?;
        file.write_all(&buf)?;
        file.sync_all()?;
        let sidecar = serde_json::json!({
            "magic": "MXMT",
            "version": CHECKPOINT_VERSION,
            "clusters": h.clusters,
            "data_dim": h.data_dim,
            "atoms": h.atoms,
            "sparsity": h.sparsity,
            "step_size": h.step_size,
            "step_mode": h.step_mode,
            "iters": h.iters,
            "solver": h.solver,
            "prior_mode": self.prior_mode,
            "param_count": self.param_count(),
        });
        fs::write(
            sidecar_path(path),
            serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n",
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path)?;
        let mut r = Reader::new(&buf);
        let magic = r.bytes(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                detail: format!("bad checkpoint magic {magic:?}, expected \"MXMT\""),
            });
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                offset: 4,
                detail: format!("unsupported checkpoint version {version}"),
            });
        }
        let clusters = r.u32()? as usize;
        let data_dim = r.u32()? as usize;
        let atoms = r.u32()? as usize;
        let sparsity = r.f64()?;
        let step_size = r.f64()?;
        let iters = r.u32()? as usize;
        let solver = Solver::from_id(r.u8()?)?;
        let prior_mode = PriorMode::from_id(r.u8()?)?;
        let step_mode = StepMode::from_id(r.u8()?)?;
        let hyper = HyperParams {
            clusters,
            data_dim,
            atoms,
            sparsity,
            step_size,
            step_mode,
            iters,
            solver,
        };
        let mut dictionaries = Vec::with_capacity(clusters);
        for _ in 0..clusters {
            let data = r.f64_slice(data_dim * atoms)?;
            dictionaries.push(Matrix::from_vec(data_dim, atoms, data)?);
        }
        let log_prior = r.f64_slice(clusters)?;
        r.expect_end()?;
        MixtureModel::new(hyper, dictionaries, log_prior, prior_mode)
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

/// Zero-mean Laplace draw via the difference of two unit exponentials,
/// which sidesteps the log-of-zero edge of inverse-CDF sampling.
fn sample_laplace(scale: f64, rng: &mut ChaCha8Rng) -> f64 {
    let e1: f64 = -(1.0 - rng.gen::<f64>()).ln();
    let e2: f64 = -(1.0 - rng.gen::<f64>()).ln();
    scale * (e1 - e2)
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Normalizes a log-space weight vector so the probabilities sum to 1.
pub fn renormalize_log_prior(log_prior: &mut [f64]) {
    let z = logsumexp(log_prior).expect("non-empty prior");
    for v in log_prior.iter_mut() {
        *v -= z;
    }
}

/// Cursor over a byte buffer that reports the failing offset on truncation.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.buf.len() as u64,
                detail: format!(
                    "truncated: needed {} bytes at offset {}, file has {}",
                    n,
                    self.pos,
                    self.buf.len()
                ),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.bytes(4)?))
    }

    pub fn u32_be(&mut self) -> Result<u32> {
        Ok(byteorder::BigEndian::read_u32(self.bytes(4)?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.bytes(8)?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(LittleEndian::read_f64(self.bytes(8)?))
    }

    pub fn f64_slice(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(n * 8)?;
        let mut out = vec![0.0; n];
        LittleEndian::read_f64_into(raw, &mut out);
        Ok(out)
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                detail: format!("{} trailing bytes after payload", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

/// In-memory dataset: flattened row-major samples with optional labels and
/// optional per-sample observation masks (true = observed).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    values: Vec<f64>,
    labels: Option<Vec<usize>>,
    masks: Option<Vec<bool>>,
}

/// Borrowed view of one sample.
#[derive(Clone, Copy, Debug)]
pub struct SampleView<'a> {
    pub values: &'a [f64],
    pub mask: Option<&'a [bool]>,
    pub label: Option<usize>,
}

impl Dataset {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dataset dimension must be >= 1".into()));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!(
                "value buffer length {} is not a multiple of dim {}",
                values.len(),
                dim
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample value at flat index {pos} is not finite"
            )));
        }
        Ok(Dataset { dim, values, labels: None, masks: None })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} samples",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Installs per-sample masks; every sample must keep at least one
    /// observed coordinate.
    pub fn set_masks(&mut self, masks: Vec<bool>) -> Result<()> {
        if masks.len() != self.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask buffer length {} vs {} values",
                masks.len(),
                self.values.len()
            )));
        }
        for i in 0..self.len() {
            if !masks[i * self.dim..(i + 1) * self.dim].iter().any(|&b| b) {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} has an all-false mask"
                )));
            }
        }
        self.masks = Some(masks);
        Ok(())
    }

    pub fn clear_masks(&mut self) {
        self.masks = None;
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn masks(&self) -> Option<&[bool]> {
        self.masks.as_deref()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mask(&self, i: usize) -> Option<&[bool]> {
        self.masks.as_ref().map(|m| &m[i * self.dim..(i + 1) * self.dim])
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn get(&self, i: usize) -> SampleView<'_> {
        SampleView { values: self.sample(i), mask: self.mask(i), label: self.label(i) }
    }

    /// Appends another dataset with the same dimension. Labels and masks are
    /// kept only if both sides carry them.
    pub fn concat(&mut self, other: Dataset) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "cannot concatenate dim {} onto dim {}",
                other.dim, self.dim
            )));
        }
        let (n_self, n_other) = (self.len(), other.len());
        self.values.extend_from_slice(&other.values);
        self.labels = match (self.labels.take(), other.labels) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(&b);
                Some(a)
            }
            _ => None,
        };
        self.masks = match (self.masks.take(), other.masks) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(&b);
                Some(a)
            }
            (None, None) => None,
            // One side masked, one fully observed: fill the unmasked side
            // with all-true masks.
            (Some(mut a), None) => {
                a.resize(a.len() + n_other * self.dim, true);
                Some(a)
            }
            (None, Some(b)) => {
                let mut a = vec![true; n_self * self.dim];
                a.extend_from_slice(&b);
                Some(a)
            }
        };
        Ok(())
    }
}
