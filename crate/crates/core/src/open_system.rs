//! Decoherence by quantum-trajectory unravelling.
//!
//! Each trajectory is a pure state advanced with the same split-step
//! schedule as the closed system. After every sub-step of length `h` one
//! uniform variate decides between
//! * relaxation on qubit `i` with probability `γ1_i h <n_i>` (apply `σ^-_i`),
//! * dephasing on qubit `i` with probability `(γφ_i / 2) h` (apply `σ^z_i`),
//! * no jump: damp excited amplitudes by `exp(-γ1_i h / 2)` and renormalise.
//!
//! With the `σ^z` jump rate set to `γφ / 2`, off-diagonal density-matrix
//! elements decay as `exp(-γφ t)`, so `γφ = 1 / Tφ` is the pure-dephasing
//! rate of the coherence itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{
    run_stroboscopic, FloquetPropagator, StateVector, StrobeRecord, C64,
};
use crate::error::{invalid, Error, Result};
use crate::model::{derive_seed, ChainSpec, DeviceParams, DisorderRealization, ProtocolParams};

/// Upper bound on the total jump probability of a single sub-step.
pub const MAX_JUMP_PROBABILITY: f64 = 0.1;

/// Default number of trajectories per ensemble.
pub const DEFAULT_TRAJECTORIES: usize = 200;

/// Per-qubit decoherence rates in 1/ns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSpec {
    pub gamma_relax: Vec<f64>,
    pub gamma_phi: Vec<f64>,
}

impl NoiseSpec {
    pub fn new(gamma_relax: Vec<f64>, gamma_phi: Vec<f64>) -> Result<Self> {
        if gamma_relax.len() != gamma_phi.len() {
            return Err(Error::DimensionMismatch {
                expected: gamma_relax.len(),
                actual: gamma_phi.len(),
            });
        }
        if gamma_relax
            .iter()
            .chain(&gamma_phi)
            .any(|g| !(g.is_finite() && *g >= 0.0))
        {
            return Err(invalid("noise rates", "must be finite and non-negative"));
        }
        Ok(Self {
            gamma_relax,
            gamma_phi,
        })
    }

    pub fn closed(n_qubits: usize) -> Self {
        Self {
            gamma_relax: vec![0.0; n_qubits],
            gamma_phi: vec![0.0; n_qubits],
        }
    }

    /// Rates `1/T1` and `1/Tφ` from device coherence times given in µs.
    pub fn from_device(device: &DeviceParams) -> Result<Self> {
        device.validate()?;
        Self::new(
            device.t1_relax.iter().map(|t| 1.0 / (t * 1e3)).collect(),
            device.t_phi.iter().map(|t| 1.0 / (t * 1e3)).collect(),
        )
    }

    pub fn n_qubits(&self) -> usize {
        self.gamma_relax.len()
    }

    pub fn is_closed(&self) -> bool {
        self.gamma_relax.iter().chain(&self.gamma_phi).all(|g| *g == 0.0)
    }

    /// Worst-case total jump probability for a sub-step of length `h`.
    pub fn step_probability_bound(&self, h: f64) -> f64 {
        self.gamma_relax
            .iter()
            .zip(&self.gamma_phi)
            .map(|(r, p)| (r + 0.5 * p) * h)
            .sum()
    }
}

/// A single stochastic trajectory.
pub struct Trajectory<'a> {
    prop: &'a FloquetPropagator,
    noise: &'a NoiseSpec,
    state: StateVector,
    rng: ChaCha8Rng,
    decay_rate: Vec<f64>,
    no_jump_cache: Vec<(f64, Vec<f64>)>,
    excited: Vec<f64>,
    jumps: usize,
}

impl<'a> Trajectory<'a> {
    pub fn new(
        prop: &'a FloquetPropagator,
        noise: &'a NoiseSpec,
        initial: StateVector,
        dt: f64,
        seed: u64,
    ) -> Result<Self> {
        let n = prop.n_qubits();
        if noise.n_qubits() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: noise.n_qubits(),
            });
        }
        if initial.n_qubits() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: initial.n_qubits(),
            });
        }
        let probability = noise.step_probability_bound(dt);
        if probability >= MAX_JUMP_PROBABILITY {
            return Err(Error::JumpProbabilityTooLarge {
                probability,
                limit: MAX_JUMP_PROBABILITY,
            });
        }
        let decay_rate = (0..initial.dim())
            .map(|b| {
                noise
                    .gamma_relax
                    .iter()
                    .enumerate()
                    .filter(|(q, _)| b >> q & 1 == 1)
                    .map(|(_, g)| g)
                    .sum()
            })
            .collect();
        Ok(Self {
            prop,
            noise,
            state: initial,
            rng: ChaCha8Rng::seed_from_u64(seed),
            decay_rate,
            no_jump_cache: Vec::new(),
            excited: vec![0.0; n],
            jumps: 0,
        })
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }

    /// Number of quantum jumps applied so far.
    pub fn jumps(&self) -> usize {
        self.jumps
    }

    pub fn advance_period(&mut self) -> Result<()> {
        let Self {
            prop,
            noise,
            state,
            rng,
            decay_rate,
            no_jump_cache,
            excited,
            jumps,
        } = self;
        prop.apply_period_stepped(state, |psi, h| {
            stochastic_step(psi, h, noise, rng, decay_rate, no_jump_cache, excited, jumps);
            Ok(())
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn stochastic_step(
    psi: &mut StateVector,
    h: f64,
    noise: &NoiseSpec,
    rng: &mut ChaCha8Rng,
    decay_rate: &[f64],
    cache: &mut Vec<(f64, Vec<f64>)>,
    excited: &mut [f64],
    jumps: &mut usize,
) {
    let idx = match cache.iter().position(|(len, _)| *len == h) {
        Some(i) => i,
        None => {
            cache.push((h, decay_rate.iter().map(|g| (-0.5 * g * h).exp()).collect()));
            cache.len() - 1
        }
    };
    let damping = &cache[idx].1;
    let amps = psi.amplitudes_mut();
    // One pass: total relaxation rate and the no-jump norm.
    let (mut relax, mut kept) = (0.0, 0.0);
    for (a, (g, d)) in amps.iter().zip(decay_rate.iter().zip(damping)) {
        let p = a.norm_sqr();
        relax += p * g;
        kept += p * d * d;
    }
    let mut r: f64 = rng.gen();
    let p_relax = relax * h;
    if r < p_relax {
        excited.iter_mut().for_each(|e| *e = 0.0);
        for (b, a) in amps.iter().enumerate() {
            let p = a.norm_sqr();
            let mut bits = b;
            while bits != 0 {
                let q = bits.trailing_zeros() as usize;
                excited[q] += p;
                bits &= bits - 1;
            }
        }
        let mut acc = 0.0;
        let last = excited.iter().rposition(|e| *e > 0.0).unwrap_or(0);
        let q = (0..excited.len())
            .find(|&q| {
                acc += noise.gamma_relax[q] * h * excited[q];
                r < acc
            })
            .unwrap_or(last);
        lower(amps, q);
        renormalize(amps);
        *jumps += 1;
        return;
    }
    r -= p_relax;
    let mut acc = 0.0;
    for (q, g) in noise.gamma_phi.iter().enumerate() {
        acc += 0.5 * g * h;
        if r < acc {
            flip_phase(amps, q);
            *jumps += 1;
            return;
        }
    }
    if kept < 1.0 {
        let inv = 1.0 / kept.sqrt();
        amps.iter_mut().zip(damping).for_each(|(a, d)| *a *= d * inv);
    }
}

fn lower(amps: &mut [C64], qubit: usize) {
    let bit = 1usize << qubit;
    for b in 0..amps.len() {
        if b & bit != 0 {
            amps[b ^ bit] = amps[b];
            amps[b] = C64::new(0.0, 0.0);
        }
    }
}

fn flip_phase(amps: &mut [C64], qubit: usize) {
    let bit = 1usize << qubit;
    amps.iter_mut()
        .enumerate()
        .filter(|(b, _)| b & bit != 0)
        .for_each(|(_, a)| *a = -*a);
}

fn renormalize(amps: &mut [C64]) {
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    let inv = C64::new(1.0 / norm, 0.0);
    apply_diagonal_scalar(amps, inv);
}

fn apply_diagonal_scalar(amps: &mut [C64], factor: C64) {
    amps.iter_mut().for_each(|a| *a *= factor);
}

/// One stochastic trajectory recorded stroboscopically. With all rates zero
/// this is exactly [`run_stroboscopic`].
#[allow(clippy::too_many_arguments)]
pub fn evolve_trajectory(
    initial: &StateVector,
    chain: &ChainSpec,
    params: &ProtocolParams,
    disorder: &DisorderRealization,
    noise: &NoiseSpec,
    n_periods: usize,
    dt: f64,
    seed: u64,
) -> Result<StrobeRecord> {
    if noise.is_closed() {
        if noise.n_qubits() != chain.n_qubits() {
            return Err(Error::DimensionMismatch {
                expected: chain.n_qubits(),
                actual: noise.n_qubits(),
            });
        }
        return run_stroboscopic(initial, chain, params, disorder, n_periods, dt);
    }
    if n_periods == 0 {
        return Err(invalid("n_periods", "must be at least 1"));
    }
    let prop = FloquetPropagator::new(chain, params, disorder, dt)?;
    record_trajectory(initial, &prop, noise, n_periods, dt, seed)
}

pub fn record_trajectory(
    initial: &StateVector,
    prop: &FloquetPropagator,
    noise: &NoiseSpec,
    n_periods: usize,
    dt: f64,
    seed: u64,
) -> Result<StrobeRecord> {
    let mut traj = Trajectory::new(prop, noise, initial.clone(), dt, seed)?;
    let mut rows = Vec::with_capacity(n_periods + 1);
    rows.push(traj.state().z_expectations());
    for _ in 0..n_periods {
        traj.advance_period()?;
        rows.push(traj.state().z_expectations());
    }
    Ok(StrobeRecord::from_rows(prop.period(), rows))
}

/// Entrywise ensemble mean with standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleAverage {
    /// Mean record; its `sem_mz` holds the magnetization standard error.
    pub mean: StrobeRecord,
    /// Standard error of each `<σ^z_i>` entry.
    pub sem_z: Vec<Vec<f64>>,
    pub count: usize,
}

fn mean_and_sem(values: impl Iterator<Item = f64> + Clone, count: usize) -> (f64, f64) {
    let m = values.clone().sum::<f64>() / count as f64;
    if count < 2 {
        return (m, 0.0);
    }
    let var = values.map(|v| (v - m).powi(2)).sum::<f64>() / (count - 1) as f64;
    (m, (var / count as f64).sqrt())
}

/// Averages records in the order given; the result depends only on that
/// order, not on how the records were produced.
pub fn ensemble_average(runs: &[StrobeRecord]) -> Result<EnsembleAverage> {
    let first = runs
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no records to average".into()))?;
    let (rows, cols) = (first.n_samples(), first.n_qubits());
    for (k, r) in runs.iter().enumerate() {
        if r.n_samples() != rows || r.n_qubits() != cols || r.per_qubit_z.iter().any(|x| x.len() != cols) {
            return Err(Error::ShapeMismatch(format!(
                "record {k} is {}x{}, expected {rows}x{cols}",
                r.n_samples(),
                r.n_qubits()
            )));
        }
        if r.period_ns != first.period_ns {
            return Err(Error::ShapeMismatch(format!("record {k} has a different period")));
        }
    }
    let m = runs.len();
    let mut mean_rows = vec![vec![0.0; cols]; rows];
    let mut sem_z = vec![vec![0.0; cols]; rows];
    for n in 0..rows {
        for q in 0..cols {
            let (mu, se) = mean_and_sem(runs.iter().map(|r| r.per_qubit_z[n][q]), m);
            mean_rows[n][q] = mu;
            sem_z[n][q] = se;
        }
    }
    let sem_mz = (0..rows)
        .map(|n| mean_and_sem(runs.iter().map(|r| r.magnetization[n]), m).1)
        .collect();
    let mut mean = StrobeRecord::from_rows(first.period_ns, mean_rows);
    mean.magnetization = (0..rows)
        .map(|n| mean_and_sem(runs.iter().map(|r| r.magnetization[n]), m).0)
        .collect();
    mean.sem_mz = Some(sem_mz);
    Ok(EnsembleAverage {
        mean,
        sem_z,
        count: m,
    })
}

/// Seed of trajectory `k` in an ensemble started from `base_seed`.
pub fn trajectory_seed(base_seed: u64, k: usize) -> u64 {
    derive_seed(base_seed, &[0x7A7A, k as u64])
}

/// Runs `n_trajectories` trajectories sequentially and averages them.
pub fn trajectory_ensemble(
    initial: &StateVector,
    prop: &FloquetPropagator,
    noise: &NoiseSpec,
    n_periods: usize,
    dt: f64,
    n_trajectories: usize,
    base_seed: u64,
) -> Result<EnsembleAverage> {
    if n_trajectories == 0 {
        return Err(invalid("n_trajectories", "must be at least 1"));
    }
    let runs = (0..n_trajectories)
        .map(|k| record_trajectory(initial, prop, noise, n_periods, dt, trajectory_seed(base_seed, k)))
        .collect::<Result<Vec<_>>>()?;
    ensemble_average(&runs)
}
