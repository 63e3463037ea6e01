//! CPMG survival probability of an NV electron coupled to nuclear spins.
//!
//! Couplings enter in cyclic units (Hz) and are converted to angular
//! frequency at the boundary; every quantity inside the closed form is
//! angular so that hyperfine terms and the Larmor frequency share units.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gyromagnetic ratio of 13C, rad/(s·T).
pub const GAMMA_C13: f64 = 2.0 * PI * 10.705e6;

/// Tesla per gauss.
pub const GAUSS: f64 = 1e-4;

/// Slack tolerated before clamping M and P into range.
const RANGE_SLACK: f64 = 1e-12;

/// Below this the closed-form denominator is treated as singular.
const SINGULAR_DENOMINATOR: f64 = 1e-15;

/// Grid points between exact re-evaluations of the phase recurrence.
const ANCHOR_INTERVAL: usize = 32;

const SEGMENT_CAP: usize = ANCHOR_INTERVAL + 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperfineCoupling {
    /// Parallel component A^z, Hz.
    pub a_par: f64,
    /// Perpendicular component A^⊥, Hz.
    pub a_perp: f64,
}

impl HyperfineCoupling {
    pub fn new(a_par: f64, a_perp: f64) -> Result<Self> {
        if !a_par.is_finite() || !a_perp.is_finite() {
            return Err(Error::domain("hyperfine couplings must be finite"));
        }
        if a_perp < 0.0 {
            return Err(Error::domain(format!(
                "perpendicular coupling must be non-negative, got {a_perp} Hz"
            )));
        }
        Ok(Self { a_par, a_perp })
    }

    pub fn from_khz(a_par_khz: f64, a_perp_khz: f64) -> Result<Self> {
        Self::new(a_par_khz * 1e3, a_perp_khz * 1e3)
    }
}

/// Ordered set of nuclear spins coupled to the sensor. May be empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpinCluster {
    pub spins: Vec<HyperfineCoupling>,
}

impl SpinCluster {
    pub fn new(spins: Vec<HyperfineCoupling>) -> Self {
        Self { spins }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &HyperfineCoupling> {
        self.spins.iter()
    }

    /// Union of two clusters (spins of `self` first).
    pub fn union(&self, other: &SpinCluster) -> SpinCluster {
        let mut spins = self.spins.clone();
        spins.extend_from_slice(&other.spins);
        SpinCluster { spins }
    }
}

impl From<Vec<HyperfineCoupling>> for SpinCluster {
    fn from(spins: Vec<HyperfineCoupling>) -> Self {
        Self { spins }
    }
}

/// Nuclear Larmor frequency ω_L = γ_n·B_z in rad/s.
pub fn larmor_frequency(b_z: f64, gamma_n: f64) -> Result<f64> {
    if !(b_z > 0.0) || !b_z.is_finite() {
        return Err(Error::domain(format!("magnetic field must be positive, got {b_z} T")));
    }
    if !gamma_n.is_finite() || gamma_n == 0.0 {
        return Err(Error::domain("gyromagnetic ratio must be finite and non-zero"));
    }
    Ok(gamma_n * b_z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldConfig {
    b_z: f64,
    gamma_n: f64,
    omega_l: f64,
}

impl FieldConfig {
    pub fn new(b_z: f64, gamma_n: f64) -> Result<Self> {
        let omega_l = larmor_frequency(b_z, gamma_n)?;
        Ok(Self {
            b_z,
            gamma_n,
            omega_l,
        })
    }

    /// 13C in a field given in gauss.
    pub fn carbon13_gauss(gauss: f64) -> Result<Self> {
        Self::new(gauss * GAUSS, GAMMA_C13)
    }

    pub fn b_z(&self) -> f64 {
        self.b_z
    }

    pub fn gamma_n(&self) -> f64 {
        self.gamma_n
    }

    pub fn omega_l(&self) -> f64 {
        self.omega_l
    }

    /// Delay of the k-th (0-based) bath resonance, (2k+1)·π/(2ω_L), in seconds.
    pub fn resonance_delay(&self, k: u64) -> f64 {
        (2 * k + 1) as f64 * PI / (2.0 * self.omega_l)
    }
}

/// Pulse-number dependent NV decoherence envelope exp(-τ/T^N) with
/// T^N = t_ref·(N/n_ref)^η.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceModel {
    pub t_ref: f64,
    pub n_ref: u32,
    pub eta: f64,
    pub enabled: bool,
}

impl Default for DecoherenceModel {
    fn default() -> Self {
        Self {
            t_ref: 3e-3,
            n_ref: 4,
            eta: 0.8,
            enabled: true,
        }
    }
}

impl DecoherenceModel {
    pub fn new(t_ref: f64, n_ref: u32, eta: f64, enabled: bool) -> Result<Self> {
        let model = Self {
            t_ref,
            n_ref,
            eta,
            enabled,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_ref > 0.0) || !self.t_ref.is_finite() {
            return Err(Error::domain("reference coherence time must be positive"));
        }
        if self.n_ref == 0 {
            return Err(Error::domain("reference pulse number must be at least 1"));
        }
        if !(self.eta > 0.0 && self.eta < 2.0) {
            return Err(Error::domain(format!("eta must lie in (0, 2), got {}", self.eta)));
        }
        Ok(())
    }

    /// Multiplier applied to M at delay `tau`; 1 when disabled.
    pub fn envelope(&self, n_pulses: u32, tau: f64) -> f64 {
        if self.enabled {
            (-tau / coherence_time(n_pulses, self)).exp()
        } else {
            1.0
        }
    }
}

pub fn coherence_time(n_pulses: u32, dec: &DecoherenceModel) -> f64 {
    dec.t_ref * (n_pulses as f64 / dec.n_ref as f64).powf(dec.eta)
}

/// CPMG block (τ − π − τ)^N.
///
/// The closed form holds for an even number of π pulses, which is what every
/// acquisition in this crate uses; odd counts are rejected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSequence {
    pub n_pulses: u32,
    /// Inter-pulse delay τ, seconds.
    pub tau: f64,
}

impl PulseSequence {
    pub fn new(n_pulses: u32, tau: f64) -> Result<Self> {
        validate_pulse_count(n_pulses)?;
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::domain(format!("delay must be non-negative, got {tau} s")));
        }
        Ok(Self { n_pulses, tau })
    }
}

pub(crate) fn validate_pulse_count(n_pulses: u32) -> Result<()> {
    if n_pulses == 0 || n_pulses % 2 != 0 {
        return Err(Error::domain(format!(
            "pulse count must be even and at least 2, got {n_pulses}"
        )));
    }
    Ok(())
}

/// Per-spin constants of the closed form.
#[derive(Debug, Clone, Copy)]
struct SpinGeometry {
    omega_tilde: f64,
    m_z: f64,
    m_x2: f64,
}

impl SpinGeometry {
    fn new(spin: &HyperfineCoupling, omega_l: f64) -> Result<Self> {
        let a_par = 2.0 * PI * spin.a_par;
        let a_perp = 2.0 * PI * spin.a_perp;
        let shifted = a_par + omega_l;
        let omega_tilde = shifted.hypot(a_perp);
        if !(omega_tilde > 0.0) {
            return Err(Error::domain(
                "effective nuclear frequency vanishes (A^z = -ω_L with A^⊥ = 0)",
            ));
        }
        let m_x = a_perp / omega_tilde;
        Ok(Self {
            omega_tilde,
            m_z: shifted / omega_tilde,
            m_x2: m_x * m_x,
        })
    }
}

/// Chebyshev polynomial T_n(x) by the doubling ladder.
fn chebyshev_t(n: u32, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    // (lo, hi) = (T_k, T_{k+1}), walking the bits of n from the top.
    let mut lo = 1.0;
    let mut hi = x;
    for bit in (0..32 - n.leading_zeros()).rev() {
        let mixed = 2.0 * lo * hi - x;
        if (n >> bit) & 1 == 1 {
            lo = mixed;
            hi = 2.0 * hi * hi - 1.0;
        } else {
            hi = mixed;
            lo = 2.0 * lo * lo - 1.0;
        }
    }
    lo
}

/// Closed-form M_j from precomputed trigonometric values, or `None` when the
/// denominator is numerically singular.
#[inline]
fn closed_form(
    geom: &SpinGeometry,
    n_pulses: u32,
    cos_a: f64,
    sin_a: f64,
    cos_b: f64,
    sin_b: f64,
) -> Option<f64> {
    let cos_phi = (cos_a * cos_b - geom.m_z * sin_a * sin_b).clamp(-1.0, 1.0);
    let denom = 1.0 + cos_phi;
    if denom < SINGULAR_DENOMINATOR {
        return None;
    }
    // sin²(Nφ/2) = (1 − cos Nφ)/2
    let sin2 = 0.5 * (1.0 - chebyshev_t(n_pulses, cos_phi));
    Some(1.0 - geom.m_x2 * (1.0 - cos_a) * (1.0 - cos_b) / denom * sin2)
}

fn clamp_unit(m: f64) -> f64 {
    debug_assert!(
        (-1.0 - RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&m),
        "modulation {m} outside [-1, 1]"
    );
    m.clamp(-1.0, 1.0)
}

/// Single-spin modulation factor M_j of the CPMG signal.
pub fn modulation_term(
    spin: &HyperfineCoupling,
    seq: &PulseSequence,
    field: &FieldConfig,
) -> Result<f64> {
    let geom = SpinGeometry::new(spin, field.omega_l())?;
    let (sin_a, cos_a) = (geom.omega_tilde * seq.tau).sin_cos();
    let (sin_b, cos_b) = (field.omega_l() * seq.tau).sin_cos();
    match closed_form(&geom, seq.n_pulses, cos_a, sin_a, cos_b, sin_b) {
        Some(m) => Ok(clamp_unit(m)),
        None => unitary_oracle(spin, seq, field),
    }
}

type Su2 = [[Complex64; 2]; 2];

const IDENTITY: Su2 = [
    [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
    [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
];

fn matmul(a: &Su2, b: &Su2) -> Su2 {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// exp(-i t (w_x σ_x + w_z σ_z)/2): spin-1/2 precession about (w_x, 0, w_z).
fn precession(w_x: f64, w_z: f64, t: f64) -> Su2 {
    let w = w_x.hypot(w_z);
    if w == 0.0 {
        return IDENTITY;
    }
    let (s, c) = (0.5 * w * t).sin_cos();
    let (nx, nz) = (w_x / w, w_z / w);
    [
        [Complex64::new(c, -s * nz), Complex64::new(0.0, -s * nx)],
        [Complex64::new(0.0, -s * nx), Complex64::new(c, s * nz)],
    ]
}

/// Brute-force M_j: propagate the nuclear spin through every free-evolution
/// interval of (τ − π − τ)^N for both electron branches and return the
/// overlap Re Tr(V₀†V₁)/2.
///
/// With the electron in m_s = 0 the nucleus precesses at ω_L about z; in
/// m_s = 1 it precesses about (A^⊥, 0, ω_L + A^z). Each π pulse swaps the
/// branch fields.
pub fn unitary_oracle(
    spin: &HyperfineCoupling,
    seq: &PulseSequence,
    field: &FieldConfig,
) -> Result<f64> {
    SpinGeometry::new(spin, field.omega_l())?;
    let omega_l = field.omega_l();
    let u0 = precession(0.0, omega_l, seq.tau);
    let u1 = precession(2.0 * PI * spin.a_perp, omega_l + 2.0 * PI * spin.a_par, seq.tau);

    let mut branches = [IDENTITY, IDENTITY];
    let mut electron = [0u8, 1u8];
    for _ in 0..seq.n_pulses {
        for (v, state) in branches.iter_mut().zip(electron.iter_mut()) {
            let (before, after) = if *state == 0 { (&u0, &u1) } else { (&u1, &u0) };
            *v = matmul(after, &matmul(before, v));
            *state ^= 1;
        }
    }
    let [v0, v1] = branches;
    let mut trace = Complex64::new(0.0, 0.0);
    for i in 0..2 {
        for k in 0..2 {
            trace += v0[k][i].conj() * v1[k][i];
        }
    }
    Ok(clamp_unit(0.5 * trace.re))
}

/// P_x = (1 + M·envelope)/2, clamped into [0, 1].
pub fn probability_from_modulation(modulation: f64, envelope: f64) -> f64 {
    let p = 0.5 * (1.0 + modulation * envelope);
    debug_assert!((-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&p));
    p.clamp(0.0, 1.0)
}

pub fn survival_probability(
    cluster: &SpinCluster,
    seq: &PulseSequence,
    field: &FieldConfig,
    dec: &DecoherenceModel,
) -> Result<f64> {
    let mut m = 1.0;
    for spin in cluster.iter() {
        m *= modulation_term(spin, seq, field)?;
    }
    Ok(probability_from_modulation(m, dec.envelope(seq.n_pulses, seq.tau)))
}

#[inline]
pub(crate) fn ns_to_seconds(ns: u64) -> f64 {
    ns as f64 * 1e-9
}

/// Vectorised evaluation of modulation products on a sorted delay grid.
///
/// Per-delay quantities that do not depend on the spin (the Larmor phase and
/// the decoherence envelope) are computed once. The spin phase ω̃τ advances
/// by a rotation recurrence between consecutive equally spaced delays and is
/// re-evaluated exactly every few points and wherever the spacing changes.
#[derive(Debug, Clone)]
pub struct GridKernel {
    n_pulses: u32,
    omega_l: f64,
    taus_ns: Vec<u64>,
    cos_b: Vec<f64>,
    sin_b: Vec<f64>,
    envelope: Vec<f64>,
    base_step_ns: u64,
    segments: Vec<Segment>,
    ladder: Vec<bool>,
}

/// Run of grid points spaced by the kernel's base step, short enough that the
/// phase recurrence stays exact to rounding.
#[derive(Debug, Clone, Copy)]
struct Segment {
    start: usize,
    len: usize,
}

/// Most frequent spacing between consecutive delays (smallest on ties).
fn base_step(taus_ns: &[u64]) -> u64 {
    let mut steps: Vec<u64> = taus_ns.windows(2).map(|w| w[1] - w[0]).collect();
    steps.sort_unstable();
    let mut best = (0usize, 1u64);
    for run in steps.chunk_by(|a, b| a == b) {
        if run.len() > best.0 {
            best = (run.len(), run[0]);
        }
    }
    best.1
}

fn segments(taus_ns: &[u64], step: u64) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=taus_ns.len() {
        let boundary = i == taus_ns.len() || taus_ns[i] - taus_ns[i - 1] != step || i - start > ANCHOR_INTERVAL;
        if boundary {
            out.push(Segment { start, len: i - start });
            start = i;
        }
    }
    out
}

impl GridKernel {
    pub fn new(
        n_pulses: u32,
        taus_ns: &[u64],
        field: &FieldConfig,
        dec: &DecoherenceModel,
    ) -> Result<Self> {
        validate_pulse_count(n_pulses)?;
        if taus_ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("delays must be strictly increasing"));
        }
        let omega_l = field.omega_l();
        let mut cos_b = Vec::with_capacity(taus_ns.len());
        let mut sin_b = Vec::with_capacity(taus_ns.len());
        let mut envelope = Vec::with_capacity(taus_ns.len());
        for &ns in taus_ns {
            let tau = ns_to_seconds(ns);
            let (s, c) = (omega_l * tau).sin_cos();
            sin_b.push(s);
            cos_b.push(c);
            envelope.push(dec.envelope(n_pulses, tau));
        }
        let base_step_ns = base_step(taus_ns);
        Ok(Self {
            n_pulses,
            omega_l,
            base_step_ns,
            segments: segments(taus_ns, base_step_ns),
            ladder: (0..32 - n_pulses.leading_zeros()).rev().map(|b| (n_pulses >> b) & 1 == 1).collect(),
            taus_ns: taus_ns.to_vec(),
            cos_b,
            sin_b,
            envelope,
        })
    }

    pub fn len(&self) -> usize {
        self.taus_ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus_ns.is_empty()
    }

    pub fn n_pulses(&self) -> u32 {
        self.n_pulses
    }

    /// Multiply `out[i]` by M_j(τ_i) for one spin.
    ///
    /// Works segment by segment on small stack buffers so that the
    /// per-point arithmetic (in particular the Chebyshev ladder) runs as
    /// independent lanes.
    pub fn multiply_spin(&self, spin: &HyperfineCoupling, out: &mut [f64]) -> Result<()> {
        assert_eq!(out.len(), self.len(), "output length must match the grid");
        let geom = SpinGeometry::new(spin, self.omega_l)?;
        let w = geom.omega_tilde;
        let (sin_d, cos_d) = (w * ns_to_seconds(self.base_step_ns)).sin_cos();

        let mut cos_a = [0.0; SEGMENT_CAP];
        let mut sin_a = [0.0; SEGMENT_CAP];
        let mut cos_phi = [0.0; SEGMENT_CAP];
        let mut lo = [0.0; SEGMENT_CAP];
        let mut hi = [0.0; SEGMENT_CAP];

        for seg in &self.segments {
            let n = seg.len;
            let range = seg.start..seg.start + n;
            let taus = &self.taus_ns[range.clone()];
            let cos_b = &self.cos_b[range.clone()];
            let sin_b = &self.sin_b[range.clone()];
            let out = &mut out[range];

            (sin_a[0], cos_a[0]) = (w * ns_to_seconds(taus[0])).sin_cos();
            for i in 1..n {
                sin_a[i] = sin_a[i - 1] * cos_d + cos_a[i - 1] * sin_d;
                cos_a[i] = cos_a[i - 1] * cos_d - sin_a[i - 1] * sin_d;
            }
            for i in 0..n {
                cos_phi[i] = (cos_a[i] * cos_b[i] - geom.m_z * sin_a[i] * sin_b[i]).clamp(-1.0, 1.0);
                lo[i] = 1.0;
                hi[i] = cos_phi[i];
            }
            // (lo, hi) = (T_k, T_{k+1}) of cos φ, walking the bits of N
            for &bit in &self.ladder {
                if bit {
                    for i in 0..n {
                        let mixed = 2.0 * lo[i] * hi[i] - cos_phi[i];
                        lo[i] = mixed;
                        hi[i] = 2.0 * hi[i] * hi[i] - 1.0;
                    }
                } else {
                    for i in 0..n {
                        let mixed = 2.0 * lo[i] * hi[i] - cos_phi[i];
                        hi[i] = mixed;
                        lo[i] = 2.0 * lo[i] * lo[i] - 1.0;
                    }
                }
            }
            for i in 0..n {
                let denom = 1.0 + cos_phi[i];
                let m = if denom < SINGULAR_DENOMINATOR {
                    self.oracle_at(spin, taus[i])?
                } else {
                    let sin2 = 0.5 * (1.0 - lo[i]);
                    clamp_unit(1.0 - geom.m_x2 * (1.0 - cos_a[i]) * (1.0 - cos_b[i]) / denom * sin2)
                };
                out[i] *= m;
            }
        }
        Ok(())
    }

    fn oracle_at(&self, spin: &HyperfineCoupling, tau_ns: u64) -> Result<f64> {
        let seq = PulseSequence {
            n_pulses: self.n_pulses,
            tau: ns_to_seconds(tau_ns),
        };
        let field = FieldConfig {
            b_z: 1.0,
            gamma_n: self.omega_l,
            omega_l: self.omega_l,
        };
        unitary_oracle(spin, &seq, &field)
    }

    /// ∏_j M_j on every grid point.
    pub fn modulation(&self, cluster: &SpinCluster) -> Result<Vec<f64>> {
        let mut out = vec![1.0; self.len()];
        for spin in cluster.iter() {
            self.multiply_spin(spin, &mut out)?;
        }
        Ok(out)
    }

    /// Turn modulation products into survival probabilities in place.
    pub fn apply_envelope(&self, values: &mut [f64]) {
        for (v, env) in values.iter_mut().zip(&self.envelope) {
            *v = probability_from_modulation(*v, *env);
        }
    }

    pub fn survival(&self, cluster: &SpinCluster) -> Result<Vec<f64>> {
        let mut values = self.modulation(cluster)?;
        self.apply_envelope(&mut values);
        Ok(values)
    }
}
