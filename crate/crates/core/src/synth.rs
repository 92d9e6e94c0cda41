//! Synthetic sparse regression instances and LIBSVM output.

use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::SparseDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub p: usize,
    /// Probability that an entry is nonzero.
    pub density: f64,
    /// Nonzeros in the planted coefficient vector.
    pub k_true: usize,
    /// Standard deviation of the additive target noise.
    pub noise: f64,
    pub seed: u64,
    /// Rescale every row to unit Euclidean norm before forming targets.
    #[serde(default)]
    pub unit_rows: bool,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub data: SparseDataset,
    pub x_true: Vec<f64>,
    /// Planted support, ascending.
    pub support: Vec<usize>,
}

/// Ground truth written next to a generated file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub spec: SynthSpec,
    pub support: Vec<usize>,
    pub x_true: Vec<f64>,
}

/// Gaussian entries kept with probability `density`, a `k_true`-sparse
/// Gaussian coefficient vector and `y = A x_true + noise * N(0, 1)`.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<Synthetic> {
    if !(spec.density > 0.0 && spec.density <= 1.0) {
        return Err(Error::Config(format!("density must lie in (0, 1], got {}", spec.density)));
    }
    if spec.k_true > spec.p {
        return Err(Error::Config(format!("k_true = {} exceeds p = {}", spec.k_true, spec.p)));
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::Config(format!("noise must be non-negative, got {}", spec.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let mut row: Vec<(usize, f64)> = Vec::new();
        for j in 0..spec.p {
            if spec.density >= 1.0 || rng.random_bool(spec.density) {
                row.push((j, rng.sample(StandardNormal)));
            }
        }
        if spec.unit_rows {
            let norm = row.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
            if norm > 0.0 {
                for e in row.iter_mut() {
                    e.1 /= norm;
                }
            }
        }
        rows.push(row);
    }
    let mut support = index::sample(&mut rng, spec.p, spec.k_true).into_vec();
    support.sort_unstable();
    let mut x_true = vec![0.0; spec.p];
    for &j in &support {
        let v: f64 = rng.sample(StandardNormal);
        // keep planted coefficients away from zero
        x_true[j] = v.signum() * (0.5 + v.abs());
    }
    let targets = rows
        .iter()
        .map(|row| {
            let clean: f64 = row.iter().map(|&(j, v)| v * x_true[j]).sum();
            let e: f64 = rng.sample(StandardNormal);
            clean + spec.noise * e
        })
        .collect();
    let data = SparseDataset::from_rows(spec.p, &rows, targets)?;
    Ok(Synthetic { data, x_true, support })
}

/// Writes `label idx:val ...` lines with 1-based indices and shortest
/// round-trip float formatting.
pub fn write_libsvm<W: Write>(mut out: W, data: &SparseDataset) -> Result<()> {
    for i in 0..data.n() {
        write!(out, "{}", data.targets()[i])?;
        let (idx, val) = data.row(i);
        for (&j, &v) in idx.iter().zip(val) {
            write!(out, " {}:{}", j + 1, v)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
