//! Surrogate information gain: the prior variance of the ideal signal at each
//! delay, estimated by Monte Carlo, and top-N_p delay selection.

use rayon::prelude::*;
use serde::Serialize;

use crate::acquisition::{AcquisitionGrid, Design, ShotNoiseConfig};
use crate::error::{Error, Result};
use crate::moments::Moments;
use crate::seed::Seed;
use crate::simulate::Simulator;
use crate::spin_model::FieldConfig;

/// Default Monte-Carlo sample count.
pub const DEFAULT_SAMPLES: u64 = 50_000;

/// Samples per accumulation chunk. Fixed so that chunk boundaries, and thus
/// the merge tree, never depend on the worker count.
const CHUNK: u64 = 128;

/// Chunks evaluated concurrently before being merged.
const CHUNKS_PER_BATCH: u64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigCurve {
    pub grid: AcquisitionGrid,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub n_samples: u64,
}

impl SigCurve {
    fn from_moments(grid: AcquisitionGrid, moments: &[Moments]) -> Self {
        let n_samples = moments.first().map_or(0, Moments::count);
        Self {
            grid,
            mean: moments.iter().map(Moments::mean).collect(),
            variance: moments.iter().map(Moments::variance).collect(),
            n_samples,
        }
    }

    /// Streaming variance of an explicit sample set (one signal per sample).
    pub fn from_signals(grid: AcquisitionGrid, signals: &[Vec<f64>]) -> Result<Self> {
        if signals.len() < 2 {
            return Err(Error::domain("SIG needs at least two samples"));
        }
        let mut moments = vec![Moments::new(); grid.len()];
        for s in signals {
            if s.len() != grid.len() {
                return Err(Error::domain("signal length does not match grid"));
            }
            for (m, &x) in moments.iter_mut().zip(s) {
                m.push(x);
            }
        }
        Ok(Self::from_moments(grid, &moments))
    }

    /// The two-outcome expectation p(x)·Var[P_x] + (1 − p(x))·Var[1 − P_x]
    /// evaluated on an explicit sample set.
    pub fn expected_outcome_from_signals(grid: AcquisitionGrid, signals: &[Vec<f64>]) -> Result<Self> {
        if signals.len() < 2 {
            return Err(Error::domain("SIG needs at least two samples"));
        }
        let mut acc = vec![OutcomeMoments::default(); grid.len()];
        for s in signals {
            if s.len() != grid.len() {
                return Err(Error::domain("signal length does not match grid"));
            }
            for (m, &x) in acc.iter_mut().zip(s) {
                m.push(x);
            }
        }
        Ok(Self::from_outcome_moments(grid, &acc))
    }

    fn from_outcome_moments(grid: AcquisitionGrid, acc: &[OutcomeMoments]) -> Self {
        let n_samples = acc.first().map_or(0, |m| m.x.count());
        Self {
            grid,
            mean: acc.iter().map(|m| m.x.mean()).collect(),
            variance: acc.iter().map(OutcomeMoments::expected_variance).collect(),
            n_samples,
        }
    }
}

/// Moments of P_x and of the complementary outcome 1 − P_x.
#[derive(Debug, Clone, Copy, Default)]
struct OutcomeMoments {
    x: Moments,
    minus_x: Moments,
}

impl OutcomeMoments {
    fn push(&mut self, p: f64) {
        self.x.push(p);
        self.minus_x.push(1.0 - p);
    }

    fn merge(&mut self, other: &Self) {
        self.x.merge(&other.x);
        self.minus_x.merge(&other.minus_x);
    }

    fn expected_variance(&self) -> f64 {
        let p_x = self.x.mean();
        p_x * self.x.variance() + (1.0 - p_x) * self.minus_x.variance()
    }
}

trait Accumulator: Clone + Default + Send {
    fn push(&mut self, p: f64);
    fn merge(&mut self, other: &Self);
}

impl Accumulator for Moments {
    fn push(&mut self, p: f64) {
        Moments::push(self, p);
    }
    fn merge(&mut self, other: &Self) {
        Moments::merge(self, other);
    }
}

impl Accumulator for OutcomeMoments {
    fn push(&mut self, p: f64) {
        OutcomeMoments::push(self, p);
    }
    fn merge(&mut self, other: &Self) {
        OutcomeMoments::merge(self, other);
    }
}

fn run_chunk<A: Accumulator>(sim: &Simulator, seed: Seed, range: std::ops::Range<u64>) -> Result<Vec<Vec<A>>> {
    let mut acc: Vec<Vec<A>> = sim.grids().iter().map(|g| vec![A::default(); g.len()]).collect();
    let mut signal = Vec::new();
    for i in range {
        let draw = sim.draw(seed.sample(i));
        for (g, grid_acc) in acc.iter_mut().enumerate() {
            sim.ideal_signal(&draw.cluster, draw.bath_index, g, &mut signal)?;
            for (a, &p) in grid_acc.iter_mut().zip(&signal) {
                a.push(p);
            }
        }
    }
    Ok(acc)
}

fn accumulate<A: Accumulator>(sim: &Simulator, n_samples: u64, seed: Seed, workers: usize) -> Result<Vec<Vec<A>>> {
    if n_samples < 2 {
        return Err(Error::domain(format!("SIG needs at least two samples, got {n_samples}")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;

    let n_chunks = n_samples.div_ceil(CHUNK);
    let mut total: Vec<Vec<A>> = sim.grids().iter().map(|g| vec![A::default(); g.len()]).collect();
    let mut first = 0;
    while first < n_chunks {
        let last = (first + CHUNKS_PER_BATCH).min(n_chunks);
        let parts: Vec<Vec<Vec<A>>> = pool.install(|| {
            (first..last)
                .into_par_iter()
                .map(|c| run_chunk(sim, seed, c * CHUNK..((c + 1) * CHUNK).min(n_samples)))
                .collect::<Result<Vec<_>>>()
        })?;
        for part in &parts {
            for (tot, p) in total.iter_mut().zip(part) {
                for (t, x) in tot.iter_mut().zip(p) {
                    t.merge(x);
                }
            }
        }
        first = last;
    }
    Ok(total)
}

/// SIG on every grid of `sim`, sharing each prior draw across grids.
///
/// `workers = 0` uses the default thread count. Output is bitwise identical
/// for any worker count.
pub fn sig_curves(sim: &Simulator, n_samples: u64, seed: Seed, workers: usize) -> Result<Vec<SigCurve>> {
    let acc = accumulate::<Moments>(sim, n_samples, seed, workers)?;
    Ok(sim
        .grids()
        .iter()
        .zip(&acc)
        .map(|(g, m)| SigCurve::from_moments(g.clone(), m))
        .collect())
}

/// SIG on a single grid.
pub fn sig_curve(sim: &Simulator, grid: usize, n_samples: u64, seed: Seed, workers: usize) -> Result<SigCurve> {
    let mut curves = sig_curves(sim, n_samples, seed, workers)?;
    if grid >= curves.len() {
        return Err(Error::domain(format!("grid index {grid} out of range")));
    }
    Ok(curves.swap_remove(grid))
}

/// Unsimplified two-outcome SIG over the same sample set as [`sig_curves`].
pub fn expected_outcome_sig(sim: &Simulator, n_samples: u64, seed: Seed, workers: usize) -> Result<Vec<SigCurve>> {
    let acc = accumulate::<OutcomeMoments>(sim, n_samples, seed, workers)?;
    Ok(sim
        .grids()
        .iter()
        .zip(&acc)
        .map(|(g, m)| SigCurve::from_outcome_moments(g.clone(), m))
        .collect())
}

/// The N_p highest-variance points of one grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub grid: AcquisitionGrid,
    /// Sorted indices into `grid`.
    pub indices: Vec<usize>,
    pub n_p: usize,
    /// Set when `n_p` exceeded the grid size and every point was taken.
    pub clamped: bool,
}

impl Selection {
    pub fn selected_grid(&self) -> AcquisitionGrid {
        self.grid.subset(&self.indices)
    }

    pub fn taus_ns(&self) -> Vec<u64> {
        self.indices.iter().map(|&i| self.grid.taus_ns[i]).collect()
    }
}

/// Indices of the `n_p` largest variances; ties go to the smaller delay.
pub fn select_top(curve: &SigCurve, n_p: usize) -> Result<Selection> {
    if n_p == 0 {
        return Err(Error::domain("n_p must be at least 1"));
    }
    let len = curve.variance.len();
    let clamped = n_p > len;
    if clamped {
        log::warn!(
            "n_p = {n_p} exceeds the {len} points of grid {}; selecting all",
            curve.grid.label
        );
    }
    let k = n_p.min(len);
    let var = &curve.variance;
    let mut order: Vec<usize> = (0..len).collect();
    let rank = |a: &usize, b: &usize| var[*b].total_cmp(&var[*a]).then(a.cmp(b));
    if k < len {
        order.select_nth_unstable_by(k - 1, rank);
        order.truncate(k);
    }
    order.sort_unstable();
    Ok(Selection {
        grid: curve.grid.clone(),
        indices: order,
        n_p,
        clamped,
    })
}

/// Design made of the selected delays only.
pub fn design_from_selection(selections: &[Selection], shot: ShotNoiseConfig) -> Result<Design> {
    Design::new(selections.iter().map(Selection::selected_grid).collect(), shot)
}

/// Fraction of `taus_ns` lying within ±`half_window_ns` of an odd multiple of
/// π/(2ω_L), where weakly coupled bath spins resonate.
pub fn near_resonance_fraction(taus_ns: &[u64], field: &FieldConfig, half_window_ns: f64) -> f64 {
    if taus_ns.is_empty() {
        return 0.0;
    }
    let quarter = field.resonance_delay(0) * 1e9;
    let near = taus_ns
        .iter()
        .filter(|&&t| {
            let t = t as f64;
            // nearest odd multiple of the quarter period
            let k = ((t / quarter - 1.0) / 2.0).round().max(0.0);
            (t - (2.0 * k + 1.0) * quarter).abs() <= half_window_ns
        })
        .count();
    near as f64 / taus_ns.len() as f64
}
