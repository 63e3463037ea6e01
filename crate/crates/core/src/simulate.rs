//! The generative model shared by SIG estimation and dataset generation:
//! draw a cluster from the prior, attach one precomputed bath configuration,
//! and evaluate the ideal signal on each grid.

use rand::Rng;
use serde::Serialize;

use crate::acquisition::AcquisitionGrid;
use crate::error::Result;
use crate::prior::{sample_bath_configs, sample_cluster_with, BathCache, BathConfig, PriorConfig};
use crate::seed::Seed;
use crate::spin_model::{DecoherenceModel, FieldConfig, GridKernel, SpinCluster};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignalModel {
    pub prior: PriorConfig,
    pub bath: Option<BathConfig>,
    pub field: FieldConfig,
    pub decoherence: DecoherenceModel,
}

/// One prior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraw {
    pub seed: Seed,
    pub cluster: SpinCluster,
    pub bath_index: Option<u32>,
}

/// A [`SignalModel`] bound to concrete grids, with bath contributions cached.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: SignalModel,
    grids: Vec<AcquisitionGrid>,
    kernels: Vec<GridKernel>,
    baths: Vec<BathCache>,
    n_bath: u32,
    master: Seed,
}

impl Simulator {
    /// Bath configurations are derived from `master` so a run is fully
    /// determined by (model, grids, master seed).
    pub fn new(model: SignalModel, grids: Vec<AcquisitionGrid>, master: Seed) -> Result<Self> {
        model.prior.validate()?;
        model.decoherence.validate()?;
        let kernels = grids
            .iter()
            .map(|g| GridKernel::new(g.n_pulses, &g.taus_ns, &model.field, &model.decoherence))
            .collect::<Result<Vec<_>>>()?;
        let (baths, n_bath) = match &model.bath {
            Some(bath) => {
                bath.validate()?;
                let configs = sample_bath_configs(bath, master);
                let caches = kernels
                    .iter()
                    .map(|k| BathCache::build(&configs, k))
                    .collect::<Result<Vec<_>>>()?;
                (caches, bath.n_configs)
            }
            None => (Vec::new(), 0),
        };
        Ok(Self {
            model,
            grids,
            kernels,
            baths,
            n_bath,
            master,
        })
    }

    pub fn model(&self) -> &SignalModel {
        &self.model
    }

    pub fn grids(&self) -> &[AcquisitionGrid] {
        &self.grids
    }

    /// Seed the bath configurations were drawn from.
    pub fn master_seed(&self) -> Seed {
        self.master
    }

    pub fn kernel(&self, grid: usize) -> &GridKernel {
        &self.kernels[grid]
    }

    /// Draw the cluster and bath index of one sample.
    pub fn draw(&self, sample_seed: Seed) -> SampleDraw {
        let mut rng = sample_seed.rng();
        let cluster = sample_cluster_with(&self.model.prior, &mut rng);
        let bath_index = (self.n_bath > 0).then(|| rng.random_range(0..self.n_bath));
        SampleDraw {
            seed: sample_seed,
            cluster,
            bath_index,
        }
    }

    /// Ideal P_x of `cluster` (plus the chosen bath configuration) on grid
    /// `grid`, written into `out`.
    pub fn ideal_signal(
        &self,
        cluster: &SpinCluster,
        bath_index: Option<u32>,
        grid: usize,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        let kernel = &self.kernels[grid];
        out.clear();
        match bath_index {
            Some(b) => out.extend_from_slice(self.baths[grid].get(b as usize)),
            None => out.resize(kernel.len(), 1.0),
        }
        for spin in cluster.iter() {
            kernel.multiply_spin(spin, out)?;
        }
        kernel.apply_envelope(out);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::make_grid_ns;
    use crate::spin_model::{survival_probability, PulseSequence};

    #[test]
    fn bath_composes_multiplicatively() {
        let field = FieldConfig::carbon13_gauss(404.0).unwrap();
        let dec = DecoherenceModel::default();
        let bath = BathConfig {
            n_configs: 3,
            spins_per_config: 20,
            ..BathConfig::default()
        };
        let model = SignalModel {
            prior: PriorConfig {
                n_min: 2,
                n_max: 4,
                ..PriorConfig::default()
            },
            bath: Some(bath),
            field,
            decoherence: dec,
        };
        let grid = make_grid_ns(32, 10_000, 12_000, 8).unwrap();
        let sim = Simulator::new(model, vec![grid.clone()], Seed(4)).unwrap();
        let draw = sim.draw(Seed(4).sample(0));
        let b = draw.bath_index.unwrap();
        let configs = sample_bath_configs(&bath, Seed(4));
        let full = draw.cluster.union(&configs[b as usize]);

        let mut out = Vec::new();
        sim.ideal_signal(&draw.cluster, draw.bath_index, 0, &mut out).unwrap();
        for (i, tau) in grid.taus().enumerate().step_by(17) {
            let seq = PulseSequence::new(32, tau).unwrap();
            let direct = survival_probability(&full, &seq, &field, &dec).unwrap();
            assert!((out[i] - direct).abs() < 1e-10, "{} vs {direct}", out[i]);
        }
    }
}
