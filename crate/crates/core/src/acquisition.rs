//! Delay grids, shot noise and measurement-time accounting.

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Seed;
use crate::spin_model::{ns_to_seconds, validate_pulse_count};

/// A pulse number and a strictly increasing list of inter-pulse delays.
///
/// Delays are held as integer nanoseconds so grid arithmetic never drifts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcquisitionGrid {
    pub n_pulses: u32,
    pub taus_ns: Vec<u64>,
    pub label: String,
}

fn seconds_to_ns(value: f64, what: &str) -> Result<u64> {
    let ns = value * 1e9;
    let rounded = ns.round();
    if !ns.is_finite() || rounded < 0.0 || (ns - rounded).abs() > 1e-6 * rounded.max(1.0) {
        return Err(Error::domain(format!(
            "{what} = {value} s is not a whole number of nanoseconds"
        )));
    }
    Ok(rounded as u64)
}

/// Upper bounds need not sit on the grid; points beyond them are dropped.
fn upper_ns(value: f64) -> Result<u64> {
    let ns = value * 1e9;
    if !ns.is_finite() || ns < 0.0 {
        return Err(Error::domain(format!("tau_hi = {value} s is not a valid delay")));
    }
    Ok((ns + 1e-6).floor() as u64)
}

/// Uniform grid `tau_lo + k·dtau`, k = 0..=floor((tau_hi − tau_lo)/dtau), in seconds.
pub fn make_grid(n_pulses: u32, tau_lo: f64, tau_hi: f64, dtau: f64) -> Result<AcquisitionGrid> {
    make_grid_ns(
        n_pulses,
        seconds_to_ns(tau_lo, "tau_lo")?,
        upper_ns(tau_hi)?,
        seconds_to_ns(dtau, "dtau")?,
    )
}

pub fn make_grid_ns(n_pulses: u32, lo_ns: u64, hi_ns: u64, step_ns: u64) -> Result<AcquisitionGrid> {
    validate_pulse_count(n_pulses)?;
    if step_ns == 0 {
        return Err(Error::domain("grid step must be positive"));
    }
    if lo_ns == 0 {
        return Err(Error::domain("grid delays must be positive"));
    }
    if lo_ns >= hi_ns {
        return Err(Error::domain(format!(
            "empty grid: tau_lo ({lo_ns} ns) must be below tau_hi ({hi_ns} ns)"
        )));
    }
    let count = (hi_ns - lo_ns) / step_ns + 1;
    let taus_ns = (0..count).map(|k| lo_ns + k * step_ns).collect();
    Ok(AcquisitionGrid {
        n_pulses,
        taus_ns,
        label: format!("N{n_pulses}"),
    })
}

impl AcquisitionGrid {
    pub fn from_taus_ns(n_pulses: u32, taus_ns: Vec<u64>, label: impl Into<String>) -> Result<Self> {
        validate_pulse_count(n_pulses)?;
        if taus_ns.is_empty() {
            return Err(Error::domain("grid has no delays"));
        }
        if taus_ns[0] == 0 || taus_ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("grid delays must be positive and strictly increasing"));
        }
        Ok(Self {
            n_pulses,
            taus_ns,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.taus_ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus_ns.is_empty()
    }

    pub fn taus(&self) -> impl Iterator<Item = f64> + '_ {
        self.taus_ns.iter().map(|&ns| ns_to_seconds(ns))
    }

    /// Grid restricted to the given (sorted, in-range) indices.
    pub fn subset(&self, indices: &[usize]) -> AcquisitionGrid {
        AcquisitionGrid {
            n_pulses: self.n_pulses,
            taus_ns: indices.iter().map(|&i| self.taus_ns[i]).collect(),
            label: self.label.clone(),
        }
    }

    /// Restrict to the listed delays; every entry must already be on the grid.
    pub fn restrict_to(&self, taus_ns: &[u64]) -> Result<AcquisitionGrid> {
        let mut indices = Vec::with_capacity(taus_ns.len());
        for &t in taus_ns {
            match self.taus_ns.binary_search(&t) {
                Ok(i) => indices.push(i),
                Err(_) => {
                    return Err(Error::domain(format!(
                        "delay {t} ns is not on grid {}",
                        self.label
                    )))
                }
            }
        }
        indices.sort_unstable();
        indices.dedup();
        Ok(self.subset(&indices))
    }

    /// Σ τ over the grid, in nanoseconds.
    pub fn tau_sum_ns(&self) -> u128 {
        self.taus_ns.iter().map(|&t| t as u128).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotNoiseConfig {
    /// Repetitions averaged per data point.
    pub n_m: u32,
    pub enabled: bool,
}

impl Default for ShotNoiseConfig {
    fn default() -> Self {
        Self {
            n_m: 250,
            enabled: true,
        }
    }
}

impl ShotNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_m == 0 {
            return Err(Error::config("n_m must be at least 1"));
        }
        Ok(())
    }
}

/// Average of `n_m` projective readouts per point: Binomial(n_m, p)/n_m.
pub fn noisy_signal(ideal: &[f64], shot: &ShotNoiseConfig, seed: Seed) -> Result<Vec<f64>> {
    if let Some(p) = ideal.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::domain(format!("probability {p} outside [0, 1]")));
    }
    if !shot.enabled {
        return Ok(ideal.to_vec());
    }
    shot.validate()?;
    let n = shot.n_m as u64;
    let scale = 1.0 / shot.n_m as f64;
    let mut rng = seed.rng();
    ideal
        .iter()
        .map(|&p| {
            let dist = Binomial::new(n, p).map_err(|e| Error::domain(e.to_string()))?;
            Ok(dist.sample(&mut rng) as f64 * scale)
        })
        .collect()
}

/// A set of grids acquired with a common repetition count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub grids: Vec<AcquisitionGrid>,
    pub shot: ShotNoiseConfig,
}

impl Design {
    pub fn new(grids: Vec<AcquisitionGrid>, shot: ShotNoiseConfig) -> Result<Self> {
        if grids.is_empty() {
            return Err(Error::config("a design needs at least one grid"));
        }
        shot.validate()?;
        Ok(Self { grids, shot })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridTime {
    pub label: String,
    pub n_pulses: u32,
    pub points: usize,
    /// Exact duration in nanoseconds.
    pub nanos: u128,
}

impl GridTime {
    pub fn seconds(&self) -> f64 {
        self.nanos as f64 * 1e-9
    }

    pub fn hours(&self) -> f64 {
        self.seconds() / 3600.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementTime {
    pub n_m: u32,
    pub grids: Vec<GridTime>,
    pub total_nanos: u128,
}

impl MeasurementTime {
    pub fn seconds(&self) -> f64 {
        self.total_nanos as f64 * 1e-9
    }

    pub fn hours(&self) -> f64 {
        self.seconds() / 3600.0
    }
}

/// t = Σ_grids Σ_τ 2·τ·N·N_m; initialization and readout are neglected.
pub fn measurement_time(design: &Design) -> MeasurementTime {
    let n_m = design.shot.n_m as u128;
    let grids: Vec<GridTime> = design
        .grids
        .iter()
        .map(|g| GridTime {
            label: g.label.clone(),
            n_pulses: g.n_pulses,
            points: g.len(),
            nanos: 2 * g.tau_sum_ns() * g.n_pulses as u128 * n_m,
        })
        .collect();
    let total_nanos = grids.iter().map(|g| g.nanos).sum();
    MeasurementTime {
        n_m: design.shot.n_m,
        grids,
        total_nanos,
    }
}
