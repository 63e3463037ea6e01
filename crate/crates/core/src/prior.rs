//! Prior over target spin clusters and the weakly coupled spin bath.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{tag, Seed};
use crate::spin_model::{GridKernel, HyperfineCoupling, SpinCluster};

/// Closed interval `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        let iv = Self { low, high };
        iv.validate()?;
        Ok(iv)
    }

    pub fn khz(low: f64, high: f64) -> Self {
        Self {
            low: low * 1e3,
            high: high * 1e3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.low.is_finite() || !self.high.is_finite() || self.low > self.high {
            return Err(Error::config(format!(
                "interval [{}, {}] must be finite with low <= high",
                self.low, self.high
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            rng.random_range(self.low..=self.high)
        }
    }
}

/// Uniform prior: n ~ U{n_min..n_max}, A^z ~ U[az], A^⊥ ~ U[aperp] (Hz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub n_min: u32,
    pub n_max: u32,
    pub az_range: Interval,
    pub aperp_range: Interval,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            n_min: 1,
            n_max: 50,
            az_range: Interval::khz(-50.0, 50.0),
            aperp_range: Interval::khz(2.0, 80.0),
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_min < 1 || self.n_min > self.n_max {
            return Err(Error::config(format!(
                "prior spin count range [{}, {}] must satisfy 1 <= n_min <= n_max",
                self.n_min, self.n_max
            )));
        }
        self.az_range.validate()?;
        self.aperp_range.validate()?;
        if self.aperp_range.low < 0.0 {
            return Err(Error::config("prior A^⊥ range must be non-negative"));
        }
        Ok(())
    }

    pub fn contains(&self, spin: &HyperfineCoupling) -> bool {
        self.az_range.contains(spin.a_par) && self.aperp_range.contains(spin.a_perp)
    }
}

/// Precomputed random bath configurations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathConfig {
    pub n_configs: u32,
    pub spins_per_config: u32,
    pub az_range: Interval,
    pub aperp_range: Interval,
}

impl Default for BathConfig {
    fn default() -> Self {
        Self {
            n_configs: 16,
            spins_per_config: 1000,
            az_range: Interval::khz(-2.0, 2.0),
            aperp_range: Interval::khz(0.0, 2.0),
        }
    }
}

impl BathConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_configs < 1 {
            return Err(Error::config("bath needs at least one configuration"));
        }
        self.az_range.validate()?;
        self.aperp_range.validate()?;
        if self.aperp_range.low < 0.0 {
            return Err(Error::config("bath A^⊥ range must be non-negative"));
        }
        Ok(())
    }
}

fn draw_spins<R: Rng>(rng: &mut R, n: u32, az: &Interval, aperp: &Interval) -> SpinCluster {
    let spins = (0..n)
        .map(|_| HyperfineCoupling {
            a_par: az.sample(rng),
            a_perp: aperp.sample(rng),
        })
        .collect();
    SpinCluster::new(spins)
}

pub fn sample_cluster(prior: &PriorConfig, seed: Seed) -> SpinCluster {
    let mut rng = seed.rng();
    sample_cluster_with(prior, &mut rng)
}

pub(crate) fn sample_cluster_with<R: Rng>(prior: &PriorConfig, rng: &mut R) -> SpinCluster {
    let n = rng.random_range(prior.n_min..=prior.n_max);
    draw_spins(rng, n, &prior.az_range, &prior.aperp_range)
}

/// Bath configuration `i` is drawn from its own stream so the list is
/// reproducible regardless of how many configurations are requested.
pub fn sample_bath_configs(bath: &BathConfig, seed: Seed) -> Vec<SpinCluster> {
    (0..bath.n_configs as u64)
        .map(|i| {
            let mut rng = seed.derive(tag::BATH, i).rng();
            draw_spins(&mut rng, bath.spins_per_config, &bath.az_range, &bath.aperp_range)
        })
        .collect()
}

/// Product of the bath spins' modulation factors on each delay of `kernel`.
pub fn bath_modulation(bath_cluster: &SpinCluster, kernel: &GridKernel) -> Result<Vec<f64>> {
    kernel.modulation(bath_cluster)
}

/// Bath modulation vectors for every configuration on one grid, built once
/// and shared read-only.
#[derive(Debug, Clone)]
pub struct BathCache {
    modulations: Vec<Vec<f64>>,
}

impl BathCache {
    pub fn build(configs: &[SpinCluster], kernel: &GridKernel) -> Result<Self> {
        use rayon::prelude::*;
        let modulations = configs
            .par_iter()
            .map(|c| bath_modulation(c, kernel))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { modulations })
    }

    pub fn len(&self) -> usize {
        self.modulations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modulations.is_empty()
    }

    pub fn get(&self, index: usize) -> &[f64] {
        &self.modulations[index]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin_model::{modulation_term, DecoherenceModel, FieldConfig, PulseSequence};

    #[test]
    fn collapsed_count_prior() {
        let prior = PriorConfig {
            n_min: 1,
            n_max: 1,
            ..PriorConfig::default()
        };
        for s in 0..100 {
            let c = sample_cluster(&prior, Seed(s));
            assert_eq!(c.len(), 1);
            assert!(prior.contains(&c.spins[0]));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let prior = PriorConfig::default();
        assert_eq!(sample_cluster(&prior, Seed(9)), sample_cluster(&prior, Seed(9)));
        assert_ne!(sample_cluster(&prior, Seed(9)), sample_cluster(&prior, Seed(10)));
        let bath = BathConfig {
            n_configs: 8,
            spins_per_config: 50,
            ..BathConfig::default()
        };
        assert_eq!(sample_bath_configs(&bath, Seed(1)), sample_bath_configs(&bath, Seed(1)));
    }

    #[test]
    fn empirical_means_match_uniform_ranges() {
        let prior = PriorConfig::default();
        let (mut az, mut ap, mut count) = (0.0, 0.0, 0usize);
        let mut n_sum = 0u64;
        let draws = 100_000u64;
        let master = Seed(11);
        for i in 0..draws {
            let c = sample_cluster(&prior, master.sample(i));
            n_sum += c.len() as u64;
            for s in c.iter() {
                assert!(prior.contains(s));
                az += s.a_par;
                ap += s.a_perp;
                count += 1;
            }
        }
        let az_mean = az / count as f64;
        let ap_mean = ap / count as f64;
        assert!(az_mean.abs() < 500.0, "{az_mean}");
        assert!((ap_mean - 41_000.0).abs() < 500.0, "{ap_mean}");
        let n_mean = n_sum as f64 / draws as f64;
        assert!((n_mean - 25.5).abs() < 0.2, "{n_mean}");
    }

    #[test]
    fn bath_helpers() {
        let field = FieldConfig::carbon13_gauss(404.0).unwrap();
        let taus: Vec<u64> = (0..500).map(|k| 10_000 + 4 * k).collect();
        let kernel = GridKernel::new(32, &taus, &field, &DecoherenceModel::disabled()).unwrap();

        let empty = BathConfig {
            n_configs: 2,
            spins_per_config: 0,
            ..BathConfig::default()
        };
        for c in sample_bath_configs(&empty, Seed(0)) {
            assert!(bath_modulation(&c, &kernel).unwrap().iter().all(|&m| m == 1.0));
        }

        let single = BathConfig {
            n_configs: 1,
            spins_per_config: 1,
            ..BathConfig::default()
        };
        let cfg = &sample_bath_configs(&single, Seed(5))[0];
        let m = bath_modulation(cfg, &kernel).unwrap();
        for (i, &ns) in taus.iter().enumerate() {
            let seq = PulseSequence::new(32, ns as f64 * 1e-9).unwrap();
            let direct = modulation_term(&cfg.spins[0], &seq, &field).unwrap();
            assert!((m[i] - direct).abs() < 1e-12);
        }

        let configs = sample_bath_configs(&BathConfig { n_configs: 3, spins_per_config: 40, ..BathConfig::default() }, Seed(2));
        let cache = BathCache::build(&configs, &kernel).unwrap();
        for (i, c) in configs.iter().enumerate() {
            let again = bath_modulation(c, &kernel).unwrap();
            assert!(cache.get(i).iter().zip(&again).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn invalid_priors_rejected() {
        let mut p = PriorConfig::default();
        p.n_min = 0;
        assert!(p.validate().is_err());
        let mut p = PriorConfig::default();
        p.aperp_range = Interval::khz(-1.0, 2.0);
        assert!(p.validate().is_err());
        assert!(Interval::new(2.0, 1.0).is_err());
    }
}
