//! Loss and regularizer families, primal/dual objectives and proximal maps.
//!
//! The problem is `P(x) = (1/n) sum_i f_i(a_i^T x) + lambda * Omega(x)`, with an
//! optional ridge term `(ridge/2) ||x||^2` carried on the regularizer side.
//! The dual lives in `R^n`: a point `theta` is built from the per-sample
//! derivatives `u_i = f_i'(a_i^T x)` and its value is
//! `D(theta) = -(1/n) sum_i f_i^*(-theta_i)`, feasible when every block
//! satisfies `Omega_j^D(A_j^T theta) <= n * lambda`.

use crate::data::{BlockPartition, SparseDataset, SupportMap};
use crate::error::{Error, Result};

/// Per-sample scalar losses `f_i(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossFamily {
    /// `f_i(z) = (z - y_i)^2 / 2`
    Squared,
    /// `f_i(z) = log(1 + exp(-y_i z))` with `y_i` in `{-1, +1}`
    Logistic,
}

impl LossFamily {
    pub fn value(self, z: f64, y: f64) -> f64 {
        match self {
            Self::Squared => 0.5 * (z - y) * (z - y),
            Self::Logistic => softplus(-y * z),
        }
    }

    pub fn deriv(self, z: f64, y: f64) -> f64 {
        match self {
            Self::Squared => z - y,
            Self::Logistic => -y * sigmoid(-y * z),
        }
    }

    /// Fenchel conjugate `f_i^*(w)`; `+inf` outside the domain.
    pub fn conjugate(self, w: f64, y: f64) -> f64 {
        match self {
            Self::Squared => 0.5 * w * w + y * w,
            Self::Logistic => {
                // domain: w = -y t with t in [0, 1]
                let t = -w * y;
                const SLACK: f64 = 1e-12;
                if !(-SLACK..=1.0 + SLACK).contains(&t) {
                    return f64::INFINITY;
                }
                let t = t.clamp(0.0, 1.0);
                xlogx(t) + xlogx(1.0 - t)
            }
        }
    }

    /// Lipschitz constant of `deriv` in `z`.
    pub fn gamma(self) -> f64 {
        match self {
            Self::Squared => 1.0,
            Self::Logistic => 0.25,
        }
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn xlogx(t: f64) -> f64 {
    if t > 0.0 {
        t * t.ln()
    } else {
        0.0
    }
}

/// Block norm `Omega_j` applied to every block of the partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularizer {
    /// `||v||_1` per block (dual norm `||v||_inf`).
    L1,
    /// `||v||_2` per block (self-dual).
    GroupL2,
}

impl Regularizer {
    pub fn block_value(self, v: &[f64]) -> f64 {
        match self {
            Self::L1 => v.iter().map(|x| x.abs()).sum(),
            Self::GroupL2 => l2(v),
        }
    }

    pub fn block_dual_norm(self, v: &[f64]) -> f64 {
        match self {
            Self::L1 => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            Self::GroupL2 => l2(v),
        }
    }

    /// In-place `prox_{t * Omega_j}`.
    pub fn block_prox(self, v: &mut [f64], t: f64) {
        match self {
            Self::L1 => {
                for x in v {
                    *x = soft_threshold(*x, t);
                }
            }
            Self::GroupL2 => {
                let norm = l2(v);
                if norm <= t {
                    v.fill(0.0);
                } else {
                    let shrink = 1.0 - t / norm;
                    for x in v {
                        *x *= shrink;
                    }
                }
            }
        }
    }
}

pub(crate) fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Anything that can hand out the coordinates of block `b` of a vector.
///
/// Implemented by the full partition (arbitrary index sets over `0..p`) and
/// by the compacted active-set layout (contiguous ranges).
pub trait BlockLayout {
    fn num_blocks(&self) -> usize;
    fn gather(&self, b: usize, src: &[f64], out: &mut Vec<f64>);
}

impl BlockLayout for BlockPartition {
    fn num_blocks(&self) -> usize {
        self.len()
    }

    fn gather(&self, b: usize, src: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.block(b).iter().map(|&j| src[j]));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub loss: LossFamily,
    pub reg: Regularizer,
    pub lambda: f64,
    /// Ridge weight `mu_f`; the objective gains `(ridge/2) ||x||^2`.
    pub ridge: f64,
    pub partition: BlockPartition,
}

impl ModelSpec {
    pub fn new(loss: LossFamily, reg: Regularizer, lambda: f64, ridge: f64, partition: BlockPartition) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Model(format!("lambda must be positive and finite, got {lambda}")));
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::Model(format!("ridge must be non-negative and finite, got {ridge}")));
        }
        Ok(Self { loss, reg, lambda, ridge, partition })
    }

    /// Squared loss with singleton L1 blocks.
    pub fn lasso(p: usize, lambda: f64) -> Result<Self> {
        Self::new(LossFamily::Squared, Regularizer::L1, lambda, 0.0, BlockPartition::singletons(p))
    }

    pub fn with_ridge(mut self, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::Model(format!("ridge must be non-negative and finite, got {ridge}")));
        }
        self.ridge = ridge;
        Ok(self)
    }

    pub fn p(&self) -> usize {
        self.partition.p()
    }

    /// Rejects datasets the model cannot be fitted on.
    pub fn check_dataset(&self, data: &SparseDataset) -> Result<()> {
        if data.p() != self.p() {
            return Err(Error::Dimension { expected: self.p(), got: data.p() });
        }
        if self.loss == LossFamily::Logistic {
            if let Some(y) = data.targets().iter().find(|y| y.abs() != 1.0) {
                return Err(Error::Model(format!("logistic loss needs labels in {{-1, +1}}, found {y}")));
            }
        }
        Ok(())
    }

    /// `prox` of `t * (lambda * Omega_j + (ridge/2) ||.||^2)` in place, given
    /// the already scaled threshold `t * lambda` and ridge factor `t * ridge`.
    pub(crate) fn block_prox_scaled(&self, v: &mut [f64], thresh: f64, ridge_t: f64) {
        self.reg.block_prox(v, thresh);
        if ridge_t > 0.0 {
            let f = 1.0 + ridge_t;
            for x in v {
                *x /= f;
            }
        }
    }

    /// `lambda * Omega(x) + (ridge/2) ||x||^2` over the blocks of `layout`.
    pub fn penalty<L: BlockLayout>(&self, layout: &L, x: &[f64]) -> f64 {
        let mut buf = Vec::new();
        let mut total = 0.0;
        for b in 0..layout.num_blocks() {
            layout.gather(b, x, &mut buf);
            total += self.lambda * self.reg.block_value(&buf);
            if self.ridge > 0.0 {
                total += 0.5 * self.ridge * buf.iter().map(|v| v * v).sum::<f64>();
            }
        }
        total
    }

    /// Primal value, dual value and gap from sufficient statistics at `x`:
    /// `loss_sum = sum_i f_i(a_i^T x)`, the derivative vector `u` and
    /// `atu = A^T u` laid out like `x`.
    ///
    /// Without ridge the dual point is `-u / max(1, Omega^D(A^T u) / (n lambda))`.
    /// With ridge the regularizer is strongly convex, its conjugate is finite
    /// everywhere and the dual point is `-u` itself.
    pub fn evaluate<L: BlockLayout>(
        &self,
        layout: &L,
        targets: &[f64],
        loss_sum: f64,
        derivs: &[f64],
        atu: &[f64],
        x: &[f64],
    ) -> GapEval {
        let n = targets.len() as f64;
        let nl = n * self.lambda;
        let mut buf = Vec::new();
        let mut block_corr = Vec::with_capacity(layout.num_blocks());
        let mut ridge_conj = 0.0;
        for b in 0..layout.num_blocks() {
            layout.gather(b, atu, &mut buf);
            block_corr.push(self.reg.block_dual_norm(&buf));
            if self.ridge > 0.0 {
                for v in buf.iter_mut() {
                    *v /= n;
                }
                self.reg.block_prox(&mut buf, self.lambda);
                ridge_conj += buf.iter().map(|v| v * v).sum::<f64>();
            }
        }
        let scale = if self.ridge > 0.0 {
            1.0
        } else {
            block_corr.iter().fold(1.0f64, |m, &c| m.max(c / nl))
        };
        let conj: f64 = derivs.iter().zip(targets).map(|(&u, &y)| self.loss.conjugate(u / scale, y)).sum();
        let mut dual = -conj / n;
        if self.ridge > 0.0 {
            dual -= ridge_conj / (2.0 * self.ridge);
        }
        let primal = loss_sum / n + self.penalty(layout, x);
        GapEval { primal, dual, gap: primal - dual, scale, block_corr }
    }
}

/// Objective values at one iterate, plus the per-block dual correlations
/// `Omega_j^D(A_j^T u)` (unscaled) the screening test needs.
#[derive(Debug, Clone, PartialEq)]
pub struct GapEval {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    /// Divisor applied to `-u` to reach dual feasibility.
    pub scale: f64,
    pub block_corr: Vec<f64>,
}

fn check_len(x: &[f64], p: usize) -> Result<()> {
    if x.len() != p {
        return Err(Error::Dimension { expected: p, got: x.len() });
    }
    Ok(())
}

pub fn primal_objective(spec: &ModelSpec, data: &SparseDataset, x: &[f64]) -> Result<f64> {
    check_len(x, data.p())?;
    let y = data.targets();
    let loss: f64 = (0..data.n()).map(|i| spec.loss.value(data.row_dot(i, x), y[i])).sum();
    Ok(loss / data.n() as f64 + spec.penalty(&spec.partition, x))
}

/// `u_i = f_i'(a_i^T x)`; for the squared loss this is the residual `Ax - y`.
pub fn residual_dual_vector(spec: &ModelSpec, data: &SparseDataset, x: &[f64]) -> Result<Vec<f64>> {
    check_len(x, data.p())?;
    let y = data.targets();
    Ok((0..data.n()).map(|i| spec.loss.deriv(data.row_dot(i, x), y[i])).collect())
}

/// Dual-feasible rescaling `y^s = -u / max(1, Omega^D(A^T u) / (n lambda))`.
pub fn dual_scale(spec: &ModelSpec, data: &SparseDataset, u: &[f64]) -> Vec<f64> {
    let atu = data.mul_t_vec(u);
    let nl = data.n() as f64 * spec.lambda;
    let dn = global_dual_norm(spec, &atu);
    let scale = (dn / nl).max(1.0);
    u.iter().map(|v| -v / scale).collect()
}

/// `Omega^D(v) = max_j Omega_j^D(v_j)`.
pub fn global_dual_norm(spec: &ModelSpec, v: &[f64]) -> f64 {
    let mut buf = Vec::new();
    (0..spec.partition.len()).fold(0.0, |m, b| {
        spec.partition.gather(b, v, &mut buf);
        m.max(spec.reg.block_dual_norm(&buf))
    })
}

/// `D(y) = -(1/n) sum_i f_i^*(-y_i)`.
pub fn dual_objective(spec: &ModelSpec, data: &SparseDataset, ys: &[f64]) -> f64 {
    let y = data.targets();
    -ys.iter().zip(y).map(|(&t, &yi)| spec.loss.conjugate(-t, yi)).sum::<f64>() / data.n() as f64
}

/// Duality gap at `x` and the dual point it was measured against.
pub fn duality_gap(spec: &ModelSpec, data: &SparseDataset, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(x, data.p())?;
    let y = data.targets();
    let z = data.mul_vec(x);
    let loss_sum: f64 = z.iter().zip(y).map(|(&z, &y)| spec.loss.value(z, y)).sum();
    let u: Vec<f64> = z.iter().zip(y).map(|(&z, &y)| spec.loss.deriv(z, y)).collect();
    let atu = data.mul_t_vec(&u);
    let eval = spec.evaluate(&spec.partition, y, loss_sum, &u, &atu, x);
    let ys = u.iter().map(|v| -v / eval.scale).collect();
    Ok((eval.gap, ys))
}

/// Block-separable `prox_{t Omega}` over every block.
pub fn prox_full(reg: Regularizer, partition: &BlockPartition, x: &[f64], t: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    let mut buf = Vec::new();
    for block in partition.blocks() {
        buf.clear();
        buf.extend(block.iter().map(|&j| x[j]));
        reg.block_prox(&mut buf, t);
        for (&j, &v) in block.iter().zip(&buf) {
            out[j] = v;
        }
    }
    out
}

/// `prox_{t phi_i}` with `phi_i(x) = sum_{G in Psi_i} d_G Omega_G(x_G)`:
/// blocks touched by sample `i` are thresholded at `t * d_G`, the rest pass
/// through unchanged.
pub fn prox_weighted(
    reg: Regularizer,
    partition: &BlockPartition,
    support: &SupportMap,
    i: usize,
    x: &[f64],
    t: f64,
) -> Vec<f64> {
    let mut out = x.to_vec();
    let mut buf = Vec::new();
    for &b in support.psi(i) {
        let d = support.weight(b).expect("blocks in a sample support have a weight");
        let block = partition.block(b);
        buf.clear();
        buf.extend(block.iter().map(|&j| x[j]));
        reg.block_prox(&mut buf, t * d);
        for (&j, &v) in block.iter().zip(&buf) {
            out[j] = v;
        }
    }
    out
}

/// Smallest `lambda` for which `x = 0` is optimal: `Omega^D(A^T u(0)) / n`.
pub fn lambda_max(loss: LossFamily, reg: Regularizer, partition: &BlockPartition, data: &SparseDataset) -> f64 {
    let u0: Vec<f64> = data.targets().iter().map(|&y| loss.deriv(0.0, y)).collect();
    let atu = data.mul_t_vec(&u0);
    let mut buf = Vec::new();
    let dn = (0..partition.len()).fold(0.0, |m: f64, b| {
        partition.gather(b, &atu, &mut buf);
        m.max(reg.block_dual_norm(&buf))
    });
    dn / data.n() as f64
}
