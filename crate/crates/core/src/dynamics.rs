//! Closed-system state-vector propagation of the three-interval drive.
//!
//! Basis ordering is little-endian: qubit `i` (0-based) is bit `i` of the
//! basis index, and `|0>` is the `+1` eigenstate of `σ^z`.
//!
//! One period consists of
//! 1. `H_x(t) + H_zz` on `[0, t1]`. Outside the envelope support only the
//!    diagonal `H_zz` acts and is applied exactly; inside the support a
//!    symmetric split step (half `H_zz`, exact x rotations at the midpoint
//!    amplitude, half `H_zz`) is used on a uniform grid with spacing `<= dt`.
//! 2. `H_zz` alone for `t2`, applied exactly.
//! 3. Instantaneous virtual-Z phases `exp(-i φ_i σ^z_i)`.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{ChainSpec, DisorderRealization, ProtocolParams};

pub type C64 = Complex64;

/// Default integration step in ns.
pub const DEFAULT_DT_NS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<C64>,
}

impl StateVector {
    /// Computational basis state; bit `i` of `index` is the state of qubit `i`.
    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > 30 {
            return Err(invalid("n_qubits", format!("unsupported qubit count {n_qubits}")));
        }
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(invalid("index", format!("{index} out of range for {n_qubits} qubits")));
        }
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        amps[index] = C64::new(1.0, 0.0);
        Ok(Self { n_qubits, amps })
    }

    /// The fully polarised state `|00...0>`.
    pub fn all_zero(n_qubits: usize) -> Result<Self> {
        Self::basis(n_qubits, 0)
    }

    pub fn from_amplitudes(n_qubits: usize, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != 1usize << n_qubits {
            return Err(Error::DimensionMismatch {
                expected: 1usize << n_qubits,
                actual: amps.len(),
            });
        }
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&mut self, factor: C64) {
        self.amps.iter_mut().for_each(|a| *a *= factor);
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `|<self|other>|^2`.
    pub fn fidelity(&self, other: &StateVector) -> f64 {
        self.inner(other).norm_sqr()
    }

    /// `<σ^z_i>` for every qubit.
    pub fn z_expectations(&self) -> Vec<f64> {
        let mut excited = vec![0.0; self.n_qubits];
        let mut total = 0.0;
        for (b, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            total += p;
            for (q, e) in excited.iter_mut().enumerate() {
                if b >> q & 1 == 1 {
                    *e += p;
                }
            }
        }
        excited.iter().map(|e| total - 2.0 * e).collect()
    }

    pub fn magnetization(&self) -> f64 {
        let z = self.z_expectations();
        z.iter().sum::<f64>() / z.len() as f64
    }
}

/// `exp(-i θ σ^x)` on one qubit.
pub(crate) fn rotate_x(amps: &mut [C64], qubit: usize, theta: f64) {
    let (s, c) = theta.sin_cos();
    let stride = 1usize << qubit;
    for block in amps.chunks_exact_mut(2 * stride) {
        let (lo, hi) = block.split_at_mut(stride);
        for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
            let (a0, b0) = (*a, *b);
            *a = C64::new(c * a0.re + s * b0.im, c * a0.im - s * b0.re);
            *b = C64::new(c * b0.re + s * a0.im, c * b0.im - s * a0.re);
        }
    }
}

pub(crate) fn apply_diagonal(amps: &mut [C64], diag: &[C64]) {
    amps.iter_mut().zip(diag).for_each(|(a, d)| *a *= d);
}

fn phases(energies: &[f64], duration: f64) -> Vec<C64> {
    energies
        .iter()
        .map(|&e| C64::from_polar(1.0, -e * duration))
        .collect()
}

/// Diagonal of `H_zz` in the computational basis.
pub fn zz_energies(chain: &ChainSpec) -> Vec<f64> {
    let n = chain.n_qubits();
    (0..chain.dim())
        .map(|b| {
            chain
                .j_zz()
                .iter()
                .enumerate()
                .map(|(i, j)| {
                    let same = (b >> i & 1) == (b >> (i + 1) & 1);
                    if same {
                        *j
                    } else {
                        -*j
                    }
                })
                .sum::<f64>()
        })
        .take(1usize << n)
        .collect()
}

// A diagonal segment split into `count` equal sub-steps for step-wise
// observers; `whole` applies the full segment at once.
#[derive(Debug, Clone)]
struct DiagonalSegment {
    duration: f64,
    whole: Vec<C64>,
    count: usize,
    sub: Vec<C64>,
}

impl DiagonalSegment {
    fn new(energies: &[f64], duration: f64, dt: f64) -> Self {
        let count = if duration > 0.0 {
            (duration / dt - 1e-9).ceil().max(1.0) as usize
        } else {
            0
        };
        let sub_len = if count > 0 { duration / count as f64 } else { 0.0 };
        Self {
            duration,
            whole: phases(energies, duration),
            count,
            sub: phases(energies, sub_len),
        }
    }

    fn step(&self) -> f64 {
        if self.count > 0 {
            self.duration / self.count as f64
        } else {
            0.0
        }
    }
}

/// Precomputed single-period propagator for fixed chain, protocol and
/// disorder.
#[derive(Debug, Clone)]
pub struct FloquetPropagator {
    n_qubits: usize,
    period: f64,
    pre: DiagonalSegment,
    post: DiagonalSegment,
    idle: DiagonalSegment,
    drive_step: f64,
    drive_angles: Vec<f64>,
    half_step: Vec<C64>,
    virtual_z: Option<Vec<C64>>,
}

fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() && dt > 0.0 {
        Ok(())
    } else {
        Err(invalid("dt", format!("must be positive and finite, got {dt}")))
    }
}

impl FloquetPropagator {
    pub fn new(
        chain: &ChainSpec,
        params: &ProtocolParams,
        disorder: &DisorderRealization,
        dt: f64,
    ) -> Result<Self> {
        check_dt(dt)?;
        let n = chain.n_qubits();
        if disorder.phases.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: disorder.phases.len(),
            });
        }
        let energies = zz_energies(chain);
        let (lo, hi) = params.envelope_support();
        let width = hi - lo;
        let steps = (width / dt - 1e-9).ceil().max(1.0) as usize;
        let h = width / steps as f64;
        let amplitude = params.g() * (1.0 - params.epsilon());
        let samples: Vec<f64> = (0..steps)
            .map(|k| params.envelope_unchecked(lo + (k as f64 + 0.5) * h))
            .collect();
        // Midpoint samples rescaled so the discrete pulse area is exactly g(1-ε) t1.
        let area = amplitude * params.t1() / (samples.iter().sum::<f64>() * h);
        let drive_angles = samples.iter().map(|f| area * f * h).collect();
        let virtual_z = (0..1usize << n)
            .map(|b| {
                let angle: f64 = disorder
                    .phases
                    .iter()
                    .enumerate()
                    .map(|(i, phi)| if b >> i & 1 == 0 { *phi } else { -*phi })
                    .sum();
                C64::from_polar(1.0, -angle)
            })
            .collect();
        Ok(Self {
            n_qubits: n,
            period: params.period(),
            pre: DiagonalSegment::new(&energies, lo, dt),
            post: DiagonalSegment::new(&energies, params.t1() - hi, dt),
            idle: DiagonalSegment::new(&energies, params.t2(), dt),
            drive_step: h,
            drive_angles,
            half_step: phases(&energies, 0.5 * h),
            virtual_z: Some(virtual_z),
        })
    }

    /// Undriven evolution under `H_zz` for `duration`, treated as one period.
    pub fn free_evolution(chain: &ChainSpec, duration: f64, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        if !(duration.is_finite() && duration > 0.0) {
            return Err(invalid("duration", format!("must be positive, got {duration}")));
        }
        let energies = zz_energies(chain);
        let empty = DiagonalSegment::new(&energies, 0.0, dt);
        Ok(Self {
            n_qubits: chain.n_qubits(),
            period: duration,
            pre: DiagonalSegment::new(&energies, duration, dt),
            post: empty.clone(),
            idle: empty,
            drive_step: 0.0,
            drive_angles: Vec::new(),
            half_step: Vec::new(),
            virtual_z: None,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    fn check_state(&self, state: &StateVector) -> Result<()> {
        if state.n_qubits() != self.n_qubits {
            return Err(Error::DimensionMismatch {
                expected: self.n_qubits,
                actual: state.n_qubits(),
            });
        }
        Ok(())
    }

    fn drive_step(&self, amps: &mut [C64], theta: f64) {
        apply_diagonal(amps, &self.half_step);
        if theta != 0.0 {
            for q in 0..self.n_qubits {
                rotate_x(amps, q, theta);
            }
        }
        apply_diagonal(amps, &self.half_step);
    }

    /// Interval 2: exact `H_zz` evolution for `t2`.
    pub fn apply_interval_two(&self, state: &mut StateVector) {
        apply_diagonal(state.amplitudes_mut(), &self.idle.whole);
    }

    /// Interval 3: virtual-Z phases.
    pub fn apply_virtual_z(&self, state: &mut StateVector) {
        if let Some(z) = &self.virtual_z {
            apply_diagonal(state.amplitudes_mut(), z);
        }
    }

    /// Interval 1: drive plus always-on `H_zz`.
    pub fn apply_interval_one(&self, state: &mut StateVector) {
        let amps = state.amplitudes_mut();
        apply_diagonal(amps, &self.pre.whole);
        for &theta in &self.drive_angles {
            self.drive_step(amps, theta);
        }
        apply_diagonal(amps, &self.post.whole);
    }

    pub fn apply_period(&self, state: &mut StateVector) -> Result<()> {
        self.check_state(state)?;
        self.apply_interval_one(state);
        self.apply_interval_two(state);
        self.apply_virtual_z(state);
        Ok(())
    }

    /// Same evolution as [`apply_period`](Self::apply_period) but with every
    /// timed segment cut into sub-steps of at most `dt`, calling
    /// `after_step(state, h)` after each sub-step of length `h`.
    pub fn apply_period_stepped<F>(&self, state: &mut StateVector, mut after_step: F) -> Result<()>
    where
        F: FnMut(&mut StateVector, f64) -> Result<()>,
    {
        self.check_state(state)?;
        fn diagonal<F>(seg: &DiagonalSegment, state: &mut StateVector, after_step: &mut F) -> Result<()>
        where
            F: FnMut(&mut StateVector, f64) -> Result<()>,
        {
            for _ in 0..seg.count {
                apply_diagonal(state.amplitudes_mut(), &seg.sub);
                after_step(state, seg.step())?;
            }
            Ok(())
        }
        diagonal(&self.pre, state, &mut after_step)?;
        for &theta in &self.drive_angles {
            self.drive_step(state.amplitudes_mut(), theta);
            after_step(state, self.drive_step)?;
        }
        diagonal(&self.post, state, &mut after_step)?;
        diagonal(&self.idle, state, &mut after_step)?;
        self.apply_virtual_z(state);
        Ok(())
    }

    /// Dense single-period unitary, built column by column.
    pub fn unitary(&self) -> Result<DMatrix<C64>> {
        let dim = 1usize << self.n_qubits;
        let mut u = DMatrix::<C64>::zeros(dim, dim);
        for col in 0..dim {
            let mut psi = StateVector::basis(self.n_qubits, col)?;
            self.apply_period(&mut psi)?;
            for (row, a) in psi.amplitudes().iter().enumerate() {
                u[(row, col)] = *a;
            }
        }
        Ok(u)
    }
}

/// Propagates `state` through one drive period.
pub fn evolve_one_period(
    state: &StateVector,
    chain: &ChainSpec,
    params: &ProtocolParams,
    disorder: &DisorderRealization,
    dt: f64,
) -> Result<StateVector> {
    let prop = FloquetPropagator::new(chain, params, disorder, dt)?;
    let mut out = state.clone();
    prop.apply_period(&mut out)?;
    Ok(out)
}

/// Stroboscopic record: `<σ^z_i>` at `t = nT`, `n = 0..=n_periods`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrobeRecord {
    pub period_ns: f64,
    /// Rows indexed by period, columns by qubit.
    pub per_qubit_z: Vec<Vec<f64>>,
    pub magnetization: Vec<f64>,
    /// Standard error of the magnetization when the record is an ensemble mean.
    pub sem_mz: Option<Vec<f64>>,
}

impl StrobeRecord {
    pub fn from_rows(period_ns: f64, per_qubit_z: Vec<Vec<f64>>) -> Self {
        let magnetization = per_qubit_z
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len().max(1) as f64)
            .collect();
        Self {
            period_ns,
            per_qubit_z,
            magnetization,
            sem_mz: None,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.per_qubit_z.first().map_or(0, Vec::len)
    }

    pub fn n_samples(&self) -> usize {
        self.magnetization.len()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["period_index".to_string(), "time_ns".into(), "mz".into()];
        header.extend((1..=self.n_qubits()).map(|q| format!("z_q{q}")));
        if self.sem_mz.is_some() {
            header.push("sem_mz".into());
        }
        w.write_record(&header)?;
        for (n, row) in self.per_qubit_z.iter().enumerate() {
            let mut rec = vec![
                n.to_string(),
                (n as f64 * self.period_ns).to_string(),
                self.magnetization[n].to_string(),
            ];
            rec.extend(row.iter().map(f64::to_string));
            if let Some(sem) = &self.sem_mz {
                rec.push(sem[n].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let col = |name: &str| header.iter().position(|h| h == name);
        let (time_col, mz_col) = match (col("time_ns"), col("mz")) {
            (Some(t), Some(m)) => (t, m),
            _ => return Err(Error::Config("series csv needs time_ns and mz columns".into())),
        };
        let z_cols: Vec<usize> = (1..)
            .map_while(|q| col(&format!("z_q{q}")))
            .collect();
        let sem_col = col("sem_mz");
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number `{s}`: {e}")))
        };
        let mut times = Vec::new();
        let mut mz = Vec::new();
        let mut rows = Vec::new();
        let mut sem = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            times.push(parse(&rec[time_col])?);
            mz.push(parse(&rec[mz_col])?);
            rows.push(z_cols.iter().map(|&c| parse(&rec[c])).collect::<Result<Vec<_>>>()?);
            if let Some(c) = sem_col {
                sem.push(parse(&rec[c])?);
            }
        }
        let period_ns = if times.len() >= 2 { times[1] - times[0] } else { 0.0 };
        Ok(Self {
            period_ns,
            per_qubit_z: rows,
            magnetization: mz,
            sem_mz: sem_col.map(|_| sem),
        })
    }
}

/// Records `<σ^z_i>` at every period boundary, starting at `t = 0`.
pub fn run_stroboscopic(
    initial: &StateVector,
    chain: &ChainSpec,
    params: &ProtocolParams,
    disorder: &DisorderRealization,
    n_periods: usize,
    dt: f64,
) -> Result<StrobeRecord> {
    if n_periods == 0 {
        return Err(invalid("n_periods", "must be at least 1"));
    }
    let prop = FloquetPropagator::new(chain, params, disorder, dt)?;
    run_with_propagator(initial, &prop, n_periods)
}

pub fn run_with_propagator(
    initial: &StateVector,
    prop: &FloquetPropagator,
    n_periods: usize,
) -> Result<StrobeRecord> {
    let mut state = initial.clone();
    let mut rows = Vec::with_capacity(n_periods + 1);
    rows.push(state.z_expectations());
    for _ in 0..n_periods {
        prop.apply_period(&mut state)?;
        rows.push(state.z_expectations());
    }
    Ok(StrobeRecord::from_rows(prop.period(), rows))
}

/// Quasi-energy spectrum of the single-period propagator.
#[derive(Debug, Clone, Serialize)]
pub struct FloquetSpectrum {
    /// Quasi-energies in `[0, 2π/T)`, sorted ascending (rad/ns).
    pub quasi_energies: Vec<f64>,
    /// Moduli of the propagator eigenvalues.
    pub moduli: Vec<f64>,
    /// `max |U^dag U - I|`.
    pub unitarity_defect: f64,
    pub period_ns: f64,
}

/// Maximum unitarity defect tolerated by [`floquet_eigenphases`].
pub const UNITARITY_TOLERANCE: f64 = 1e-8;

pub fn unitarity_defect(u: &DMatrix<C64>) -> f64 {
    let prod = u.adjoint() * u;
    let mut worst: f64 = 0.0;
    for i in 0..prod.nrows() {
        for j in 0..prod.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((prod[(i, j)] - C64::new(target, 0.0)).norm());
        }
    }
    worst
}

/// Quasi-energies `ε_α` with `U = Σ e^{-i ε_α T} |φ_α><φ_α|`, for `N <= 10`.
pub fn floquet_eigenphases(
    chain: &ChainSpec,
    params: &ProtocolParams,
    disorder: &DisorderRealization,
    dt: f64,
) -> Result<FloquetSpectrum> {
    if chain.n_qubits() > 10 {
        return Err(invalid("n_qubits", "dense Floquet diagonalisation is limited to N <= 10"));
    }
    let prop = FloquetPropagator::new(chain, params, disorder, dt)?;
    let u = prop.unitary()?;
    let defect = unitarity_defect(&u);
    if defect > UNITARITY_TOLERANCE {
        return Err(Error::NotUnitary { defect });
    }
    let period = prop.period();
    let (quasi_energies, moduli) = quasi_energies_of(u, period);
    Ok(FloquetSpectrum {
        quasi_energies,
        moduli,
        unitarity_defect: defect,
        period_ns: period,
    })
}

/// Eigenvalue phases of `u` mapped to quasi-energies in `[0, 2π/T)`.
pub fn quasi_energies_of(u: DMatrix<C64>, period: f64) -> (Vec<f64>, Vec<f64>) {
    let (_, t) = Schur::new(u).unpack();
    let mut pairs: Vec<(f64, f64)> = (0..t.nrows())
        .map(|i| {
            let lambda = t[(i, i)];
            ((-lambda.arg()).rem_euclid(TAU) / period, lambda.norm())
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_disorder;

    fn clean(n: usize, eps: f64, t2: f64) -> (ChainSpec, ProtocolParams, DisorderRealization) {
        (
            ChainSpec::noninteracting(n).unwrap(),
            ProtocolParams::with_default_width(70.0, t2, eps).unwrap(),
            DisorderRealization::clean(n),
        )
    }

    #[test]
    fn perfect_pulse_flips_all_spins() {
        let (chain, params, dis) = clean(4, 0.0, 0.0);
        let psi = StateVector::all_zero(4).unwrap();
        let once = evolve_one_period(&psi, &chain, &params, &dis, 0.5).unwrap();
        let all_one = StateVector::basis(4, 0b1111).unwrap();
        assert!((once.fidelity(&all_one) - 1.0).abs() < 1e-12);
        assert!((once.magnetization() + 1.0).abs() < 1e-12);
        let twice = evolve_one_period(&once, &chain, &params, &dis, 0.5).unwrap();
        assert!((twice.fidelity(&psi) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_angle_tracks_distortion() {
        // Single spin, J = 0: the pulse is exp(-i (π/2)(1-ε) σ^x), so
        // <σ^z> = cos(π(1-ε)).
        let (chain, params, dis) = clean(1, 0.18, 0.0);
        let psi = StateVector::all_zero(1).unwrap();
        let out = evolve_one_period(&psi, &chain, &params, &dis, 0.5).unwrap();
        let expected = (std::f64::consts::PI * 0.82).cos();
        assert!((out.magnetization() - expected).abs() < 1e-12, "{} vs {expected}", out.magnetization());
    }

    #[test]
    fn dimension_checks() {
        let (chain, params, dis) = clean(3, 0.0, 0.0);
        let psi = StateVector::all_zero(2).unwrap();
        assert!(matches!(
            evolve_one_period(&psi, &chain, &params, &dis, 0.5),
            Err(Error::DimensionMismatch { .. })
        ));
        let psi = StateVector::all_zero(3).unwrap();
        assert!(evolve_one_period(&psi, &chain, &params, &DisorderRealization::clean(2), 0.5).is_err());
        assert!(evolve_one_period(&psi, &chain, &params, &dis, 0.0).is_err());
        assert!(evolve_one_period(&psi, &chain, &params, &dis, f64::NAN).is_err());
    }

    #[test]
    fn strobe_series_alternates() {
        let (chain, params, dis) = clean(3, 0.0, 10.0);
        let psi = StateVector::all_zero(3).unwrap();
        let rec = run_stroboscopic(&psi, &chain, &params, &dis, 6, 0.5).unwrap();
        assert_eq!(rec.n_samples(), 7);
        assert_eq!(rec.magnetization[0], 1.0);
        for (n, m) in rec.magnetization.iter().enumerate() {
            let target = if n % 2 == 0 { 1.0 } else { -1.0 };
            assert!((m - target).abs() < 1e-12, "n={n} m={m}");
        }
        assert!(run_stroboscopic(&psi, &chain, &params, &dis, 0, 0.5).is_err());
    }

    #[test]
    fn single_spin_quasi_energies_split_by_pi_over_t() {
        let (chain, params, dis) = clean(1, 0.0, 0.0);
        let spec = floquet_eigenphases(&chain, &params, &dis, 0.5).unwrap();
        let t = params.period();
        let gap = spec.quasi_energies[1] - spec.quasi_energies[0];
        assert!((gap - std::f64::consts::PI / t).abs() < 1e-9, "{:?}", spec.quasi_energies);
        assert!(spec.moduli.iter().all(|m| (m - 1.0).abs() < 1e-8));
    }

    #[test]
    fn interval_two_commutes_with_virtual_z() {
        let chain = ChainSpec::table_one();
        let params = ProtocolParams::with_default_width(70.0, 25.0, 0.1).unwrap();
        let dis = sample_disorder(8, 5).unwrap();
        let prop = FloquetPropagator::new(&chain, &params, &dis, 0.5).unwrap();
        let mut psi = StateVector::all_zero(8).unwrap();
        prop.apply_interval_one(&mut psi);
        let mut a = psi.clone();
        prop.apply_interval_two(&mut a);
        prop.apply_virtual_z(&mut a);
        let mut b = psi;
        prop.apply_virtual_z(&mut b);
        prop.apply_interval_two(&mut b);
        let diff = a
            .amplitudes()
            .iter()
            .zip(b.amplitudes())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let rec = StrobeRecord::from_rows(95.0, vec![vec![1.0, 1.0], vec![-0.5, -0.25]]);
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("period_index,time_ns,mz,z_q1,z_q2\n"));
        let back = StrobeRecord::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rec);
    }
}
