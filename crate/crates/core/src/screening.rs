//! Active sets, compacted sample views and the gap-safe elimination test.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::BlockPartition;
use crate::error::{Error, Result};
use crate::model::{BlockLayout, GapEval};
use crate::problem::Problem;

const ABSENT: usize = usize::MAX;

/// Surviving blocks at one epoch, and the map between full coordinates and
/// the dense compact layout the solvers work in.
///
/// Compact coordinates are laid out block by block in ascending block id;
/// within a block they follow the partition's listed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    epoch: u64,
    blocks: Vec<usize>,
    offsets: Vec<usize>,
    features: Vec<usize>,
    coord_block: Vec<usize>,
    compact_of: Vec<usize>,
}

impl ActiveSet {
    /// Every block active, epoch 0.
    pub fn full(partition: &BlockPartition) -> Self {
        Self::build(partition, 0, (0..partition.len()).collect())
    }

    pub fn from_blocks(partition: &BlockPartition, epoch: u64, mut blocks: Vec<usize>) -> Result<Self> {
        blocks.sort_unstable();
        blocks.dedup();
        if let Some(&b) = blocks.iter().find(|&&b| b >= partition.len()) {
            return Err(Error::Partition(format!("block id {b} out of range (q = {})", partition.len())));
        }
        Ok(Self::build(partition, epoch, blocks))
    }

    fn build(partition: &BlockPartition, epoch: u64, blocks: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        let mut features = Vec::new();
        let mut coord_block = Vec::new();
        let mut compact_of = vec![ABSENT; partition.p()];
        offsets.push(0);
        for (k, &b) in blocks.iter().enumerate() {
            for &j in partition.block(b) {
                compact_of[j] = features.len();
                features.push(j);
                coord_block.push(k);
            }
            offsets.push(features.len());
        }
        Self { epoch, blocks, offsets, features, coord_block, compact_of }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Surviving global block ids, ascending.
    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    /// `q_s`
    pub fn q(&self) -> usize {
        self.blocks.len()
    }

    /// `p_s`
    pub fn p_active(&self) -> usize {
        self.features.len()
    }

    pub fn p_full(&self) -> usize {
        self.compact_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Global coordinate of every compact coordinate.
    pub fn features(&self) -> &[usize] {
        &self.features
    }

    /// Compact coordinate range of the `k`-th surviving block.
    pub fn block_range(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    /// Position of global block `b` among the survivors.
    pub fn block_pos(&self, b: usize) -> Option<usize> {
        self.blocks.binary_search(&b).ok()
    }

    pub fn compact_index(&self, j: usize) -> Option<usize> {
        let c = self.compact_of[j];
        (c != ABSENT).then_some(c)
    }

    /// Position of the block owning compact coordinate `c`.
    pub fn coord_block(&self, c: usize) -> usize {
        self.coord_block[c]
    }

    /// Full-length vector to compact layout; mass outside the set is an error.
    pub fn compact(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.p_full() {
            return Err(Error::Dimension { expected: self.p_full(), got: x.len() });
        }
        if let Some((j, &v)) = x.iter().enumerate().find(|&(j, &v)| v != 0.0 && self.compact_of[j] == ABSENT) {
            return Err(Error::InactiveMass { index: j, value: v });
        }
        Ok(self.features.iter().map(|&j| x[j]).collect())
    }

    /// Compact vector to full length, zero outside the set.
    pub fn expand(&self, xc: &[f64]) -> Result<Vec<f64>> {
        if xc.len() != self.p_active() {
            return Err(Error::Dimension { expected: self.p_active(), got: xc.len() });
        }
        let mut x = vec![0.0; self.p_full()];
        for (&j, &v) in self.features.iter().zip(xc) {
            x[j] = v;
        }
        Ok(x)
    }

    /// The next epoch's set, keeping only `keep` (global block ids).
    pub fn restrict(&self, partition: &BlockPartition, keep: Vec<usize>) -> Result<Self> {
        if let Some(&b) = keep.iter().find(|&&b| self.block_pos(b).is_none()) {
            return Err(Error::Partition(format!("block {b} is not active and cannot survive")));
        }
        Self::from_blocks(partition, self.epoch + 1, keep)
    }

    /// Maps a compact vector laid out for `from` (a superset) onto this set,
    /// dropping coordinates that are no longer active.
    pub fn project_from(&self, from: &ActiveSet, xc: &[f64]) -> Vec<f64> {
        self.features.iter().map(|&j| xc[from.compact_of[j]]).collect()
    }
}

impl BlockLayout for ActiveSet {
    fn num_blocks(&self) -> usize {
        self.q()
    }

    fn gather(&self, b: usize, src: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&src[self.block_range(b)]);
    }
}

/// Rows of a contiguous sample range restricted to the active coordinates,
/// with each sample's touched active blocks and their reweighting factors.
#[derive(Debug, Clone)]
pub struct CompactView {
    start: usize,
    row_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    row_val: Vec<f64>,
    psi_ptr: Vec<usize>,
    psi_blk: Vec<usize>,
    psi_w: Vec<f64>,
}

impl CompactView {
    pub fn new(problem: &Problem, active: &ActiveSet) -> Self {
        Self::for_range(problem, active, 0..problem.n())
    }

    pub fn for_range(problem: &Problem, active: &ActiveSet, range: Range<usize>) -> Self {
        let data = problem.data();
        let support = problem.support();
        let mut row_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut row_val = Vec::new();
        let mut psi_ptr = vec![0];
        let mut psi_blk = Vec::new();
        let mut psi_w = Vec::new();
        let mut entries = Vec::new();
        let start = range.start;
        for i in range {
            entries.clear();
            let (idx, val) = data.row(i);
            entries.extend(idx.iter().zip(val).filter_map(|(&j, &v)| active.compact_index(j).map(|c| (c, v))));
            entries.sort_unstable_by_key(|e| e.0);
            for &(c, v) in &entries {
                row_idx.push(c);
                row_val.push(v);
            }
            row_ptr.push(row_idx.len());
            for &b in support.psi(i) {
                if let Some(k) = active.block_pos(b) {
                    psi_blk.push(k);
                    psi_w.push(support.weight(b).expect("touched block has a weight"));
                }
            }
            psi_ptr.push(psi_blk.len());
        }
        Self { start, row_ptr, row_idx, row_val, psi_ptr, psi_blk, psi_w }
    }

    /// First global sample index covered.
    pub fn start(&self) -> usize {
        self.start
    }

    /// Number of samples covered.
    pub fn len(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Compact coordinates (ascending) and values of local sample `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let s = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.row_idx[s.clone()], &self.row_val[s])
    }

    /// Active block positions touched by local sample `r`, with `d_G`.
    pub fn psi(&self, r: usize) -> (&[usize], &[f64]) {
        let s = self.psi_ptr[r]..self.psi_ptr[r + 1];
        (&self.psi_blk[s.clone()], &self.psi_w[s])
    }

    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (idx, val) = self.row(r);
        idx.iter().zip(val).map(|(&c, &v)| x[c] * v).sum()
    }
}

/// Relative rounding allowance added to the duality gap before it sets the radius.
pub const GAP_ROUNDING: f64 = 1e-13;

/// How the screening sphere radius is computed from the duality gap.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RadiusRule {
    /// `sqrt(2 max(L, n gamma) gap)`: the dual objective is `1/(n gamma)`
    /// strongly concave, which bounds the distance to the dual optimum.
    #[default]
    Safe,
    /// `sqrt(2 L gap)` with `L = gamma max_i ||a_i||^2`. Smaller than the
    /// safe radius whenever `max_i ||a_i||^2 < n` and can then eliminate
    /// blocks that are active at the optimum.
    Verbatim,
}

impl RadiusRule {
    pub fn constant(self, problem: &Problem) -> f64 {
        match self {
            Self::Safe => problem.lipschitz().max(problem.n() as f64 * problem.spec().loss.gamma()),
            Self::Verbatim => problem.lipschitz(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    /// Epoch of the set that was tested.
    pub epoch: u64,
    pub gap: f64,
    pub radius: f64,
    /// Global block ids tested, with `n lambda - (Omega_j^D(A_j^T y^s) + Omega_j^D(A_j) r)`.
    pub tested: Vec<usize>,
    pub margins: Vec<f64>,
    pub eliminated: Vec<usize>,
    pub survivors: Vec<usize>,
    /// Set when the iterate is zero and already satisfies the optimality
    /// conditions, so every block was removed at once.
    pub null_certificate: bool,
}

/// Runs the elimination test on `active` given an evaluation at compact `x`.
pub(crate) fn screen_with_eval(
    problem: &Problem,
    active: &ActiveSet,
    x: &[f64],
    eval: &GapEval,
    rule: RadiusRule,
) -> Result<(ActiveSet, ScreeningReport)> {
    let spec = problem.spec();
    let nl = problem.n() as f64 * spec.lambda;
    let gap = eval.gap.max(0.0);
    // P and D are sums over n terms; near the optimum their difference is
    // pure rounding and a zero radius would split ties on noise
    let slack = GAP_ROUNDING * (eval.primal.abs() + eval.dual.abs());
    let radius = (2.0 * rule.constant(problem) * (gap + slack)).sqrt();
    let col_norms = problem.col_dual_norms();

    let max_corr = eval.block_corr.iter().copied().fold(0.0, f64::max);
    let null_certificate = !active.is_empty() && x.iter().all(|&v| v == 0.0) && max_corr <= nl * (1.0 + 1e-12);

    let mut margins = Vec::with_capacity(active.q());
    let mut eliminated = Vec::new();
    let mut survivors = Vec::new();
    for (k, &b) in active.blocks().iter().enumerate() {
        let margin = nl - (eval.block_corr[k] / eval.scale + col_norms[b] * radius);
        margins.push(margin);
        if null_certificate || margin > 0.0 {
            eliminated.push(b);
        } else {
            survivors.push(b);
        }
    }
    let next = active.restrict(&spec.partition, survivors.clone())?;
    let report = ScreeningReport {
        epoch: active.epoch(),
        gap,
        radius,
        tested: active.blocks().to_vec(),
        margins,
        eliminated,
        survivors,
        null_certificate,
    };
    Ok((next, report))
}

/// Everything one screening pass produces.
#[derive(Debug, Clone)]
pub struct ScreenOutcome {
    pub active: ActiveSet,
    pub report: ScreeningReport,
    /// `grad F(x)` in the compact layout of the new active set.
    pub gradient: Vec<f64>,
    /// The scaled dual point `y^s`.
    pub dual: Vec<f64>,
    pub eval: GapEval,
}

/// One screening pass at compact iterate `x` on `active`.
pub fn screen_pass(problem: &Problem, active: &ActiveSet, x: &[f64], rule: RadiusRule) -> Result<ScreenOutcome> {
    if x.len() != active.p_active() {
        return Err(Error::Dimension { expected: active.p_active(), got: x.len() });
    }
    let view = CompactView::new(problem, active);
    let head = crate::solver::sequential_head(problem, active, &view, x);
    let eval = problem.spec().evaluate(active, problem.data().targets(), head.loss_sum, &head.derivs, &head.atu, x);
    let (next, report) = screen_with_eval(problem, active, x, &eval, rule)?;
    let n = problem.n() as f64;
    let gradient = next.project_from(active, &head.atu).into_iter().map(|g| g / n).collect();
    let dual = head.derivs.iter().map(|u| -u / eval.scale).collect();
    Ok(ScreenOutcome { active: next, report, gradient, dual, eval })
}

/// Blocks whose dual correlation at `x` reaches `n lambda` within relative
/// tolerance `rel_tol`; at an optimal `x` this is the equicorrelation set.
pub fn equicorrelation_set(problem: &Problem, x: &[f64], rel_tol: f64) -> Result<Vec<usize>> {
    let spec = problem.spec();
    let data = problem.data();
    let u = crate::model::residual_dual_vector(spec, data, x)?;
    let atu = data.mul_t_vec(&u);
    let nl = problem.n() as f64 * spec.lambda;
    let mut buf = Vec::new();
    let corr: Vec<f64> = (0..spec.partition.len())
        .map(|b| {
            spec.partition.gather(b, &atu, &mut buf);
            spec.reg.block_dual_norm(&buf)
        })
        .collect();
    let scale = if spec.ridge > 0.0 { 1.0 } else { corr.iter().fold(1.0f64, |m, &c| m.max(c / nl)) };
    Ok((0..corr.len()).filter(|&b| corr[b] / scale >= nl * (1.0 - rel_tol)).collect())
}
