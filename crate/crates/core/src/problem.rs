use crate::data::{build_support_map, column_dual_norms, smoothness_constant, SparseDataset, SupportMap};
use crate::error::Result;
use crate::model::ModelSpec;

/// A model bound to a dataset, with the static quantities every solver needs.
#[derive(Debug, Clone)]
pub struct Problem {
    spec: ModelSpec,
    data: SparseDataset,
    support: SupportMap,
    col_norms: Vec<f64>,
    lipschitz: f64,
}

impl Problem {
    pub fn new(spec: ModelSpec, data: SparseDataset) -> Result<Self> {
        spec.check_dataset(&data)?;
        let support = build_support_map(&data, &spec.partition)?;
        let col_norms = column_dual_norms(&data, &spec.partition, spec.reg);
        let lipschitz = smoothness_constant(&data, spec.loss);
        Ok(Self { spec, data, support, col_norms, lipschitz })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn data(&self) -> &SparseDataset {
        &self.data
    }

    pub fn support(&self) -> &SupportMap {
        &self.support
    }

    /// `Omega_j^D(A_j)` per block.
    pub fn col_dual_norms(&self) -> &[f64] {
        &self.col_norms
    }

    /// Smoothness constant `L` of the per-sample losses, from the full dataset.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }
}
