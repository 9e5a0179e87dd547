//! Configuration, named presets, scenario execution and persistence.
//!
//! A [`Scenario`] is a set of `(ε, t2)` points, each simulated for a number
//! of disorder realizations. Realization `r` at point `(ε_j, t2_k)` uses the
//! disorder seed `derive_seed(base_seed, [r, j, k])`, so every run is
//! reproducible from the scenario alone. Runs are computed in parallel and
//! written by a single writer in a fixed order.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    crystalline_fraction, even_prefix, fit_biexponential, fit_lorentzian_critical_point,
    peak_height, peak_height_variance, spectrum, windowed_peaks, BiExponentialFit, Lifetime,
    VarianceEstimate, DEFAULT_BOOTSTRAP_RESAMPLES, DEFAULT_BOOTSTRAP_SEED, DEFAULT_WINDOW_PERIODS,
};
use crate::dynamics::{run_stroboscopic, FloquetPropagator, StateVector, StrobeRecord, DEFAULT_DT_NS};
use crate::error::{invalid, Error, Result};
use crate::fit::FitResult;
use crate::model::{
    derive_seed, sample_disorder, ChainSpec, DeviceParams, ProtocolParams, ZzConvention,
    TABLE_ONE_ALPHA_GHZ, TABLE_ONE_G_MHZ, TABLE_ONE_JZ_MHZ, TABLE_ONE_OMEGA_GHZ, TABLE_ONE_T1_US,
    TABLE_ONE_TPHI_US,
};
use crate::open_system::{ensemble_average, record_trajectory, trajectory_seed, NoiseSpec, DEFAULT_TRAJECTORIES};

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Device section of the configuration file, in laboratory units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub omega_ghz: Vec<f64>,
    pub alpha_ghz: Vec<f64>,
    pub g_mhz: Vec<f64>,
    pub t1_us: Vec<f64>,
    pub tphi_us: Vec<f64>,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            omega_ghz: TABLE_ONE_OMEGA_GHZ.to_vec(),
            alpha_ghz: TABLE_ONE_ALPHA_GHZ.to_vec(),
            g_mhz: TABLE_ONE_G_MHZ.to_vec(),
            t1_us: TABLE_ONE_T1_US.to_vec(),
            tphi_us: TABLE_ONE_TPHI_US.to_vec(),
        }
    }
}

impl DeviceConfig {
    pub fn to_params(&self) -> Result<DeviceParams> {
        DeviceParams::new(
            self.omega_ghz.clone(),
            self.alpha_ghz.clone(),
            self.g_mhz.clone(),
            self.t1_us.clone(),
            self.tphi_us.clone(),
        )
    }
}

/// Optional custom grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_custom_name")]
    pub name: String,
    pub epsilons: Vec<f64>,
    pub t2_ns: Vec<f64>,
}

fn default_custom_name() -> String {
    "custom".into()
}

/// Top-level configuration file (TOML). Every key is optional; defaults
/// describe the eight-qubit device with `t1 = 70 ns`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub n_qubits: usize,
    pub t1_ns: f64,
    pub t2_ns: f64,
    pub epsilon: f64,
    /// Envelope FWHM; `t1_ns / 8` when absent.
    pub w_ns: Option<f64>,
    pub j_zz_mhz: Vec<f64>,
    pub zz_convention: ZzConvention,
    pub seed: u64,
    pub n_periods: usize,
    pub dt_ns: f64,
    pub realizations: usize,
    pub noise: bool,
    pub trajectories: usize,
    pub window_periods: usize,
    pub workers: Option<usize>,
    pub device: DeviceConfig,
    pub grid: Option<GridConfig>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            n_qubits: 8,
            t1_ns: 70.0,
            t2_ns: 0.0,
            epsilon: 0.0,
            w_ns: None,
            j_zz_mhz: TABLE_ONE_JZ_MHZ.to_vec(),
            zz_convention: ZzConvention::default(),
            seed: 1,
            n_periods: 120,
            dt_ns: DEFAULT_DT_NS,
            realizations: 1,
            noise: false,
            trajectories: DEFAULT_TRAJECTORIES,
            window_periods: DEFAULT_WINDOW_PERIODS,
            workers: None,
            device: DeviceConfig::default(),
            grid: None,
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn chain(&self) -> Result<ChainSpec> {
        if self.j_zz_mhz.len() + 1 != self.n_qubits {
            return Err(invalid(
                "j_zz_mhz",
                format!("{} qubits need {} couplings, got {}", self.n_qubits, self.n_qubits.saturating_sub(1), self.j_zz_mhz.len()),
            ));
        }
        ChainSpec::from_mhz(&self.j_zz_mhz, self.zz_convention)
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        let device = self.device.to_params()?;
        if device.n_qubits() != self.n_qubits {
            return Err(invalid(
                "device",
                format!("device has {} qubits, chain has {}", device.n_qubits(), self.n_qubits),
            ));
        }
        NoiseSpec::from_device(&device)
    }
}

/// Named scenario presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Fig2,
    Fig3,
    Fig4,
    Custom,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig2" => Ok(Preset::Fig2),
            "fig3" => Ok(Preset::Fig3),
            "fig4" => Ok(Preset::Fig4),
            "custom" => Ok(Preset::Custom),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Desk-scale ε grid of the lifetime preset.
pub const FIG3_EPSILONS: [f64; 7] = [0.0, 0.03, 0.06, 0.09, 0.12, 0.15, 0.18];
pub const FIG3_REALIZATIONS: usize = 10;
pub const FIG3_DT_NS: f64 = 1.0;
/// Desk-scale ε grid of the crossover preset (strictly positive for the log fit).
pub const FIG4_EPSILONS: [f64; 9] = [0.02, 0.05, 0.08, 0.12, 0.16, 0.2, 0.25, 0.3, 0.35];
pub const FIG4_T2_NS: [f64; 3] = [0.0, 25.0, 50.0];
pub const FIG4_REALIZATIONS: usize = 20;

/// Everything needed to reproduce a batch of runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub chain: ChainSpec,
    pub t1_ns: f64,
    pub w_ns: Option<f64>,
    pub epsilons: Vec<f64>,
    pub t2_ns: Vec<f64>,
    /// `(ε index, t2 index)` pairs to run; `None` runs the full grid.
    pub points: Option<Vec<(usize, usize)>>,
    pub n_periods: usize,
    pub realizations: usize,
    pub base_seed: u64,
    /// `None` for closed-system runs.
    pub noise: Option<NoiseSpec>,
    pub trajectories: usize,
    pub dt_ns: f64,
    pub window_periods: usize,
}

/// One grid point of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub eps_index: usize,
    pub t2_index: usize,
    pub epsilon: f64,
    pub t2_ns: f64,
}

impl Scenario {
    /// Builds a scenario from a configuration and a preset; `noise`
    /// overrides the configuration's noise switch when given.
    pub fn from_config(config: &Config, preset: Preset, noise: Option<bool>) -> Result<Self> {
        let chain = config.chain()?;
        let mut s = Scenario {
            name: "custom".into(),
            chain,
            t1_ns: config.t1_ns,
            w_ns: config.w_ns,
            epsilons: vec![config.epsilon],
            t2_ns: vec![config.t2_ns],
            points: None,
            n_periods: config.n_periods,
            realizations: config.realizations,
            base_seed: config.seed,
            noise: None,
            trajectories: config.trajectories,
            dt_ns: config.dt_ns,
            window_periods: config.window_periods,
        };
        let mut noise_on = config.noise;
        match preset {
            Preset::Fig2 => {
                s.name = "fig2".into();
                s.epsilons = vec![0.0, 0.18];
                s.t2_ns = vec![0.0, 50.0];
                s.points = Some(vec![(0, 0), (1, 0), (1, 1)]);
                s.n_periods = 120;
                noise_on = false;
            }
            Preset::Fig3 => {
                s.name = "fig3".into();
                s.epsilons = FIG3_EPSILONS.to_vec();
                s.t2_ns = vec![25.0];
                s.n_periods = 120;
                s.realizations = FIG3_REALIZATIONS;
                s.dt_ns = FIG3_DT_NS;
                noise_on = true;
            }
            Preset::Fig4 => {
                s.name = "fig4".into();
                s.epsilons = FIG4_EPSILONS.to_vec();
                s.t2_ns = FIG4_T2_NS.to_vec();
                s.n_periods = 120;
                s.realizations = FIG4_REALIZATIONS;
                noise_on = false;
            }
            Preset::Custom => {
                if let Some(grid) = &config.grid {
                    s.name = grid.name.clone();
                    s.epsilons = grid.epsilons.clone();
                    s.t2_ns = grid.t2_ns.clone();
                }
            }
        }
        if noise.unwrap_or(noise_on) {
            s.noise = Some(config.noise_spec()?);
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() || self.t2_ns.is_empty() {
            return Err(invalid("grid", "ε and t2 grids must be non-empty"));
        }
        if self.realizations == 0 {
            return Err(invalid("realizations", "must be at least 1"));
        }
        if self.noise.is_some() && self.trajectories == 0 {
            return Err(invalid("trajectories", "must be at least 1 with noise on"));
        }
        if let Some(noise) = &self.noise {
            if noise.n_qubits() != self.chain.n_qubits() {
                return Err(Error::DimensionMismatch {
                    expected: self.chain.n_qubits(),
                    actual: noise.n_qubits(),
                });
            }
        }
        if let Some(points) = &self.points {
            if points.is_empty() {
                return Err(invalid("points", "must be non-empty"));
            }
            if points.iter().any(|&(e, t)| e >= self.epsilons.len() || t >= self.t2_ns.len()) {
                return Err(invalid("points", "index outside the grid"));
            }
        }
        for point in self.grid_points() {
            self.protocol(&point)?;
        }
        if !(self.dt_ns.is_finite() && self.dt_ns > 0.0) {
            return Err(invalid("dt_ns", "must be positive"));
        }
        Ok(())
    }

    pub fn grid_points(&self) -> Vec<GridPoint> {
        let make = |eps_index: usize, t2_index: usize| GridPoint {
            eps_index,
            t2_index,
            epsilon: self.epsilons[eps_index],
            t2_ns: self.t2_ns[t2_index],
        };
        match &self.points {
            Some(points) => points.iter().map(|&(e, t)| make(e, t)).collect(),
            None => (0..self.t2_ns.len())
                .flat_map(|t| (0..self.epsilons.len()).map(move |e| (e, t)))
                .map(|(e, t)| make(e, t))
                .collect(),
        }
    }

    pub fn protocol(&self, point: &GridPoint) -> Result<ProtocolParams> {
        match self.w_ns {
            Some(w) => ProtocolParams::new(self.t1_ns, point.t2_ns, point.epsilon, w),
            None => ProtocolParams::with_default_width(self.t1_ns, point.t2_ns, point.epsilon),
        }
    }

    /// Disorder seed of realization `r` at `point`.
    pub fn run_seed(&self, point: &GridPoint, realization: usize) -> u64 {
        derive_seed(
            self.base_seed,
            &[realization as u64, point.eps_index as u64, point.t2_index as u64],
        )
    }

    /// Checks that no two runs share a derived seed.
    pub fn check_seeds(&self) -> Result<()> {
        let mut seen: HashMap<u64, String> = HashMap::new();
        for point in self.grid_points() {
            for r in 0..self.realizations {
                let label = run_label(&point, r);
                if let Some(prev) = seen.insert(self.run_seed(&point, r), label.clone()) {
                    return Err(Error::SeedCollision(prev, label));
                }
            }
        }
        Ok(())
    }

    /// Simulates one realization, returning its (trajectory-averaged when
    /// noisy) stroboscopic record.
    pub fn simulate(&self, point: &GridPoint, realization: usize) -> Result<StrobeRecord> {
        let n = self.chain.n_qubits();
        let params = self.protocol(point)?;
        let seed = self.run_seed(point, realization);
        let disorder = sample_disorder(n, seed)?;
        let initial = StateVector::all_zero(n)?;
        if self.n_periods == 0 {
            return Ok(StrobeRecord::from_rows(params.period(), vec![initial.z_expectations()]));
        }
        match &self.noise {
            None => run_stroboscopic(&initial, &self.chain, &params, &disorder, self.n_periods, self.dt_ns),
            Some(noise) => {
                let prop = FloquetPropagator::new(&self.chain, &params, &disorder, self.dt_ns)?;
                let runs = (0..self.trajectories)
                    .map(|k| {
                        record_trajectory(&initial, &prop, noise, self.n_periods, self.dt_ns, trajectory_seed(seed, k))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ensemble_average(&runs)?.mean)
            }
        }
    }
}

fn run_label(point: &GridPoint, realization: usize) -> String {
    format!("t2_{}_eps_{}_r{}", point.t2_index, point.eps_index, realization)
}

fn point_label(point: &GridPoint) -> String {
    format!("t2_{}_eps_{}", point.t2_index, point.eps_index)
}

/// Full-series spectral summary of one magnetization series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesSummary {
    pub peak_height: f64,
    pub crystalline_fraction: f64,
    pub pi_bin_dominant: bool,
    pub samples_used: usize,
}

/// Spectrum summary of a stroboscopic series (odd lengths lose the last sample).
pub fn summarize_series(series: &[f64], period_ns: f64) -> Result<SeriesSummary> {
    let used = even_prefix(series);
    let spec = spectrum(used, period_ns)?;
    Ok(SeriesSummary {
        peak_height: peak_height(&spec)?,
        crystalline_fraction: crystalline_fraction(&spec)?,
        pi_bin_dominant: spec.pi_bin_dominant()?,
        samples_used: used.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunEntry {
    pub t2_index: usize,
    pub eps_index: usize,
    pub realization: usize,
    pub epsilon: f64,
    pub t2_ns: f64,
    pub seed: u64,
    pub series_file: Option<String>,
    pub initial_z: Option<Vec<f64>>,
    pub summary: Option<SeriesSummary>,
    pub lifetime_ns: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointEntry {
    pub t2_index: usize,
    pub eps_index: usize,
    pub epsilon: f64,
    pub t2_ns: f64,
    pub successful_runs: usize,
    pub mean_series_file: Option<String>,
    pub spectrum_file: Option<String>,
    pub windows_file: Option<String>,
    /// Spectrum summary of the realization-averaged series.
    pub mean_summary: Option<SeriesSummary>,
    pub mean_peak_height: Option<f64>,
    pub peak_height_variance: Option<VarianceEstimate>,
    /// Bi-exponential fit of the realization-averaged window heights.
    pub lifetime_fit: Option<BiExponentialFit>,
    pub lifetime_ns: Option<f64>,
    /// Mean and standard error of the per-realization lifetimes.
    pub realization_lifetime_mean_ns: Option<f64>,
    pub realization_lifetime_sem_ns: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalPoint {
    pub t2_ns: f64,
    pub epsilon0: Option<f64>,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Incomplete,
    Complete,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub status: RunStatus,
    /// Unix seconds at which the manifest was written; the only field that
    /// differs between identical re-runs.
    pub written_at_unix: u64,
    pub scenario: Scenario,
    pub runs: Vec<RunEntry>,
    pub points: Vec<PointEntry>,
    pub critical_points: Vec<CriticalPoint>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_record(path: &Path, record: &StrobeRecord) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    record.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_spectrum(path: &Path, series: &[f64], period_ns: f64) -> Result<()> {
    let spec = spectrum(even_prefix(series), period_ns)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin", "frequency_per_ns", "magnitude"])?;
    for (k, (f, m)) in spec.frequencies.iter().zip(&spec.magnitudes).enumerate() {
        w.write_record([k.to_string(), f.to_string(), m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_windows(path: &Path, starts: &[usize], heights: &[f64], period_ns: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["window_start_period", "t_w_ns", "peak_height"])?;
    for (s, h) in starts.iter().zip(heights) {
        w.write_record([s.to_string(), (*s as f64 * period_ns).to_string(), h.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Window heights averaged over realizations; `None` if any series is
/// shorter than the window.
fn averaged_windows(records: &[&StrobeRecord], window: usize) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<f64>>)> {
    let per: Vec<Vec<_>> = records
        .iter()
        .map(|r| windowed_peaks(&r.magnetization, window, 1))
        .collect::<Result<_>>()?;
    let starts: Vec<usize> = per[0].iter().map(|p| p.start).collect();
    let heights: Vec<Vec<f64>> = per.iter().map(|v| v.iter().map(|p| p.height).collect()).collect();
    let mean = (0..starts.len())
        .map(|i| heights.iter().map(|h| h[i]).sum::<f64>() / heights.len() as f64)
        .collect();
    Ok((starts, mean, heights))
}

fn mean_series(records: &[&StrobeRecord]) -> Vec<f64> {
    let n = records[0].magnetization.len();
    (0..n)
        .map(|i| records.iter().map(|r| r.magnetization[i]).sum::<f64>() / records.len() as f64)
        .collect()
}

/// Analysis of one grid point from its successful realizations.
fn analyze_point(
    scenario: &Scenario,
    point: &GridPoint,
    records: &[&StrobeRecord],
    lifetimes: &mut [Option<f64>],
) -> (PointEntry, Option<(StrobeRecord, Option<(Vec<usize>, Vec<f64>)>)>) {
    let mut entry = PointEntry {
        t2_index: point.t2_index,
        eps_index: point.eps_index,
        epsilon: point.epsilon,
        t2_ns: point.t2_ns,
        successful_runs: records.len(),
        mean_series_file: None,
        spectrum_file: None,
        windows_file: None,
        mean_summary: None,
        mean_peak_height: None,
        peak_height_variance: None,
        lifetime_fit: None,
        lifetime_ns: None,
        realization_lifetime_mean_ns: None,
        realization_lifetime_sem_ns: None,
        notes: Vec::new(),
    };
    if records.is_empty() {
        entry.notes.push("no successful realizations".into());
        return (entry, None);
    }
    let period = records[0].period_ns;
    let mean = mean_series(records);
    let mut mean_record = StrobeRecord::from_rows(
        period,
        (0..mean.len())
            .map(|i| {
                (0..records[0].n_qubits())
                    .map(|q| records.iter().map(|r| r.per_qubit_z[i][q]).sum::<f64>() / records.len() as f64)
                    .collect()
            })
            .collect(),
    );
    mean_record.magnetization = mean.clone();
    if scenario.n_periods == 0 {
        entry.notes.push("zero periods: initial observables only".into());
        return (entry, Some((mean_record, None)));
    }

    match summarize_series(&mean, period) {
        Ok(s) => entry.mean_summary = Some(s),
        Err(e) => entry.notes.push(format!("mean spectrum: {e}")),
    }
    let heights: Vec<f64> = records
        .iter()
        .filter_map(|r| summarize_series(&r.magnetization, period).ok())
        .map(|s| s.peak_height)
        .collect();
    if !heights.is_empty() {
        entry.mean_peak_height = Some(heights.iter().sum::<f64>() / heights.len() as f64);
    }
    if heights.len() >= 2 {
        match peak_height_variance(&heights, DEFAULT_BOOTSTRAP_RESAMPLES, DEFAULT_BOOTSTRAP_SEED) {
            Ok(v) => entry.peak_height_variance = Some(v),
            Err(e) => entry.notes.push(format!("variance: {e}")),
        }
    }

    let mut windows = None;
    match averaged_windows(records, scenario.window_periods) {
        Ok((starts, avg, per)) => {
            let times: Vec<f64> = starts.iter().map(|&s| s as f64 * period).collect();
            match fit_biexponential(&times, &avg) {
                Ok(fit) => {
                    entry.lifetime_ns = fit.lifetime.value();
                    entry.lifetime_fit = Some(fit);
                }
                Err(e) => entry.notes.push(format!("lifetime fit: {e}")),
            }
            for (slot, h) in lifetimes.iter_mut().zip(&per) {
                *slot = fit_biexponential(&times, h).ok().and_then(|f| f.lifetime.value());
            }
            let values: Vec<f64> = lifetimes.iter().flatten().copied().collect();
            if !values.is_empty() {
                let m = values.iter().sum::<f64>() / values.len() as f64;
                entry.realization_lifetime_mean_ns = Some(m);
                if values.len() >= 2 {
                    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
                    entry.realization_lifetime_sem_ns = Some((var / values.len() as f64).sqrt());
                }
            }
            windows = Some((starts, avg));
        }
        Err(e) => entry.notes.push(format!("windows: {e}")),
    }
    (entry, Some((mean_record, windows)))
}

/// Lorentzian critical point for each t2 from per-point variances; points
/// with `ε <= 0` are left out of the log fit.
fn critical_points(t2s: &[f64], epsilons: &[f64], variances: &[Vec<Option<f64>>]) -> Vec<CriticalPoint> {
    t2s.iter()
        .zip(variances)
        .map(|(&t2, row)| {
            let (eps, vals): (Vec<f64>, Vec<f64>) = epsilons
                .iter()
                .zip(row)
                .filter_map(|(&e, v)| v.filter(|_| e > 0.0).map(|v| (e, v)))
                .unzip();
            match fit_lorentzian_critical_point(&eps, &vals) {
                Ok(fit) => CriticalPoint {
                    t2_ns: t2,
                    epsilon0: fit.get("epsilon0"),
                    fit: Some(fit),
                    error: None,
                },
                Err(e) => CriticalPoint {
                    t2_ns: t2,
                    epsilon0: None,
                    fit: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = workers {
        if k == 0 {
            return Err(invalid("workers", "must be at least 1"));
        }
        builder = builder.num_threads(k);
    }
    builder.build().map_err(|e| Error::Config(e.to_string()))
}

/// Runs every `(point, realization)` in parallel, returning results in
/// scenario order.
fn simulate_all(scenario: &Scenario, workers: Option<usize>) -> Result<Vec<(GridPoint, Vec<Result<StrobeRecord>>)>> {
    let points = scenario.grid_points();
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..scenario.realizations).map(move |r| (p, r)))
        .collect();
    let pool = thread_pool(workers)?;
    let mut results: Vec<Result<StrobeRecord>> =
        pool.install(|| jobs.par_iter().map(|&(p, r)| scenario.simulate(&points[p], r)).collect());
    let mut grouped = Vec::with_capacity(points.len());
    for point in points.into_iter().rev() {
        let tail = results.split_off(results.len() - scenario.realizations);
        grouped.push((point, tail));
    }
    grouped.reverse();
    Ok(grouped)
}

/// Executes a scenario and writes its outputs under `out_dir`:
/// `series/` (one CSV per realization), `mean/`, `spectra/`, `windows/`,
/// `summary.csv` and `manifest.json`.
pub fn run_scenario(scenario: &Scenario, out_dir: &Path, workers: Option<usize>) -> Result<Manifest> {
    scenario.validate()?;
    scenario.check_seeds()?;
    for sub in ["series", "mean", "spectra", "windows"] {
        fs::create_dir_all(out_dir.join(sub))?;
    }
    let manifest_path = out_dir.join("manifest.json");
    let mut manifest = Manifest {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        status: RunStatus::Incomplete,
        written_at_unix: now_unix(),
        scenario: scenario.clone(),
        runs: Vec::new(),
        points: Vec::new(),
        critical_points: Vec::new(),
    };
    write_json(&manifest_path, &manifest)?;

    let grouped = simulate_all(scenario, workers)?;
    let mut variances = vec![vec![None; scenario.epsilons.len()]; scenario.t2_ns.len()];
    for (point, results) in &grouped {
        let mut ok = Vec::new();
        let mut run_entries = Vec::new();
        for (r, res) in results.iter().enumerate() {
            let mut entry = RunEntry {
                t2_index: point.t2_index,
                eps_index: point.eps_index,
                realization: r,
                epsilon: point.epsilon,
                t2_ns: point.t2_ns,
                seed: scenario.run_seed(point, r),
                series_file: None,
                initial_z: None,
                summary: None,
                lifetime_ns: None,
                error: None,
            };
            match res {
                Ok(record) => {
                    let rel = format!("series/{}.csv", run_label(point, r));
                    write_record(&out_dir.join(&rel), record)?;
                    entry.series_file = Some(rel);
                    entry.initial_z = record.per_qubit_z.first().cloned();
                    if record.n_samples() >= 2 {
                        entry.summary = summarize_series(&record.magnetization, record.period_ns).ok();
                    }
                    ok.push(record);
                }
                Err(e) => entry.error = Some(e.to_string()),
            }
            run_entries.push(entry);
        }
        let mut lifetimes = vec![None; ok.len()];
        let (mut entry, outputs) = analyze_point(scenario, point, &ok, &mut lifetimes);
        for (run, life) in run_entries.iter_mut().filter(|e| e.error.is_none()).zip(lifetimes) {
            run.lifetime_ns = life;
        }
        if let Some((mean_record, windows)) = outputs {
            let label = point_label(point);
            let rel = format!("mean/{label}.csv");
            write_record(&out_dir.join(&rel), &mean_record)?;
            entry.mean_series_file = Some(rel);
            if mean_record.n_samples() >= 2 {
                let rel = format!("spectra/{label}.csv");
                write_spectrum(&out_dir.join(&rel), &mean_record.magnetization, mean_record.period_ns)?;
                entry.spectrum_file = Some(rel);
            }
            if let Some((starts, heights)) = windows {
                let rel = format!("windows/{label}.csv");
                write_windows(&out_dir.join(&rel), &starts, &heights, mean_record.period_ns)?;
                entry.windows_file = Some(rel);
            }
        }
        variances[point.t2_index][point.eps_index] = entry.peak_height_variance.map(|v| v.variance);
        manifest.runs.extend(run_entries);
        manifest.points.push(entry);
    }
    if scenario.realizations >= 2 && scenario.n_periods > 0 {
        manifest.critical_points = critical_points(&scenario.t2_ns, &scenario.epsilons, &variances);
    }
    write_summary(&out_dir.join("summary.csv"), &manifest.points)?;
    manifest.status = RunStatus::Complete;
    manifest.written_at_unix = now_unix();
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn write_summary(path: &Path, points: &[PointEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t2_ns",
        "epsilon",
        "runs",
        "mean_series_peak",
        "mean_series_fraction",
        "mean_series_pi_dominant",
        "mean_peak_height",
        "peak_height_variance",
        "variance_bootstrap_se",
        "lifetime_ns",
        "realization_lifetime_mean_ns",
        "realization_lifetime_sem_ns",
    ])?;
    for p in points {
        let s = p.mean_summary.as_ref();
        w.write_record([
            p.t2_ns.to_string(),
            p.epsilon.to_string(),
            p.successful_runs.to_string(),
            opt(s.map(|s| s.peak_height)),
            opt(s.map(|s| s.crystalline_fraction)),
            s.map_or(String::new(), |s| s.pi_bin_dominant.to_string()),
            opt(p.mean_peak_height),
            opt(p.peak_height_variance.map(|v| v.variance)),
            opt(p.peak_height_variance.map(|v| v.bootstrap_se)),
            opt(p.lifetime_ns),
            opt(p.realization_lifetime_mean_ns),
            opt(p.realization_lifetime_sem_ns),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Peak-height variance surface over `(t2, ε)` with per-t2 critical points.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseDiagram {
    pub epsilons: Vec<f64>,
    pub t2_ns: Vec<f64>,
    /// `variance[t2][ε]`.
    pub variance: Vec<Vec<VarianceEstimate>>,
    pub critical_points: Vec<CriticalPoint>,
}

impl PhaseDiagram {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t2_ns", "epsilon", "variance", "bootstrap_se"])?;
        for (t2, row) in self.t2_ns.iter().zip(&self.variance) {
            for (eps, v) in self.epsilons.iter().zip(row) {
                w.write_record([t2.to_string(), eps.to_string(), v.variance.to_string(), v.bootstrap_se.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the phase diagram from peak heights indexed `[t2][ε][realization]`.
/// Also the entry point for externally supplied heights.
pub fn phase_diagram_from_heights(
    epsilons: &[f64],
    t2_ns: &[f64],
    heights: &[Vec<Vec<f64>>],
) -> Result<PhaseDiagram> {
    if epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(invalid("epsilons", "the phase-diagram grid must be strictly positive"));
    }
    if heights.len() != t2_ns.len() {
        return Err(Error::DimensionMismatch {
            expected: t2_ns.len(),
            actual: heights.len(),
        });
    }
    let mut variance = Vec::with_capacity(t2_ns.len());
    for row in heights {
        if row.len() != epsilons.len() {
            return Err(Error::DimensionMismatch {
                expected: epsilons.len(),
                actual: row.len(),
            });
        }
        variance.push(
            row.iter()
                .map(|h| peak_height_variance(h, DEFAULT_BOOTSTRAP_RESAMPLES, DEFAULT_BOOTSTRAP_SEED))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let values: Vec<Vec<Option<f64>>> = variance
        .iter()
        .map(|row| row.iter().map(|v| Some(v.variance)).collect())
        .collect();
    Ok(PhaseDiagram {
        critical_points: critical_points(t2_ns, epsilons, &values),
        epsilons: epsilons.to_vec(),
        t2_ns: t2_ns.to_vec(),
        variance,
    })
}

/// Closed-system sweep over the full `(ε, t2)` grid of `scenario`.
pub fn sweep_phase_diagram(scenario: &Scenario, workers: Option<usize>) -> Result<PhaseDiagram> {
    if scenario.realizations < 2 {
        return Err(invalid("realizations", "variance needs at least 2 realizations"));
    }
    if scenario.epsilons.len() < 5 {
        return Err(invalid("epsilons", "need at least 5 ε points per t2"));
    }
    if scenario.n_periods < 1 {
        return Err(invalid("n_periods", "must be at least 1"));
    }
    let closed = Scenario {
        noise: None,
        points: None,
        ..scenario.clone()
    };
    closed.validate()?;
    closed.check_seeds()?;
    let grouped = simulate_all(&closed, workers)?;
    let mut heights = vec![vec![Vec::new(); closed.epsilons.len()]; closed.t2_ns.len()];
    for (point, results) in grouped {
        for res in results {
            let rec = res?;
            heights[point.t2_index][point.eps_index].push(summarize_series(&rec.magnetization, rec.period_ns)?.peak_height);
        }
    }
    phase_diagram_from_heights(&closed.epsilons, &closed.t2_ns, &heights)
}

/// Default output directory for a scenario name.
pub fn default_out_dir(name: &str) -> PathBuf {
    PathBuf::from("runs").join(name)
}

/// Windowed analysis of an existing series CSV.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesAnalysis {
    pub summary: SeriesSummary,
    pub window_periods: usize,
    pub windows: Vec<(usize, f64)>,
    pub lifetime: Option<BiExponentialFit>,
    pub notes: Vec<String>,
}

pub fn analyze_record(record: &StrobeRecord, window: usize) -> Result<SeriesAnalysis> {
    let summary = summarize_series(&record.magnetization, record.period_ns)?;
    let mut notes = Vec::new();
    let peaks = windowed_peaks(&record.magnetization, window, 1)?;
    let times: Vec<f64> = peaks.iter().map(|p| p.start as f64 * record.period_ns).collect();
    let heights: Vec<f64> = peaks.iter().map(|p| p.height).collect();
    let lifetime = match fit_biexponential(&times, &heights) {
        Ok(f) => {
            if f.lifetime == Lifetime::Indeterminate {
                notes.push("lifetime indeterminate".into());
            }
            Some(f)
        }
        Err(e) => {
            notes.push(format!("lifetime fit: {e}"));
            None
        }
    };
    Ok(SeriesAnalysis {
        summary,
        window_periods: window,
        windows: peaks.iter().map(|p| (p.start, p.height)).collect(),
        lifetime,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(realizations: usize) -> Scenario {
        let config = Config {
            n_qubits: 3,
            j_zz_mhz: vec![1.0, 1.2],
            n_periods: 24,
            realizations,
            ..Config::default()
        };
        let mut s = Scenario::from_config(&config, Preset::Custom, Some(false)).unwrap();
        s.epsilons = vec![0.02, 0.1];
        s.t2_ns = vec![0.0, 25.0];
        s
    }

    #[test]
    fn config_defaults_and_parsing() {
        let c = Config::from_toml_str("t2_ns = 25.0\nepsilon = 0.06\n[device]\nomega_ghz=[5.0]\nalpha_ghz=[-0.2]\ng_mhz=[]\nt1_us=[10.0]\ntphi_us=[5.0]\n").unwrap();
        assert_eq!(c.n_qubits, 8);
        assert_eq!(c.t2_ns, 25.0);
        assert_eq!(c.device.omega_ghz, vec![5.0]);
        assert!(Config::from_toml_str("bogus = 1").is_err());
        assert!(c.noise_spec().is_err());
        assert_eq!(Config::default().chain().unwrap(), ChainSpec::table_one());
    }

    #[test]
    fn presets() {
        let c = Config::default();
        let f2 = Scenario::from_config(&c, Preset::Fig2, None).unwrap();
        let pts = f2.grid_points();
        assert_eq!(pts.len(), 3);
        assert_eq!((pts[2].epsilon, pts[2].t2_ns), (0.18, 50.0));
        assert!(f2.noise.is_none());
        let f3 = Scenario::from_config(&c, Preset::Fig3, None).unwrap();
        assert!(f3.noise.is_some());
        assert_eq!(f3.realizations, 10);
        let f3_closed = Scenario::from_config(&c, Preset::Fig3, Some(false)).unwrap();
        assert!(f3_closed.noise.is_none());
        let f4 = Scenario::from_config(&c, Preset::Fig4, None).unwrap();
        assert!(f4.epsilons.iter().all(|e| *e > 0.0));
        assert!(f4.check_seeds().is_ok());
        assert!("fig5".parse::<Preset>().is_err());
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let s = small(4);
        s.check_seeds().unwrap();
        let p = s.grid_points()[1];
        assert_eq!(s.run_seed(&p, 2), small(4).run_seed(&p, 2));
        assert_ne!(s.run_seed(&p, 2), s.run_seed(&p, 3));
    }

    #[test]
    fn zero_periods_reports_initial_state() {
        let mut s = small(1);
        s.n_periods = 0;
        let dir = tempfile::tempdir().unwrap();
        let m = run_scenario(&s, dir.path(), Some(1)).unwrap();
        assert_eq!(m.status, RunStatus::Complete);
        assert_eq!(m.runs.len(), 4);
        assert!(m.runs.iter().all(|r| r.initial_z == Some(vec![1.0; 3]) && r.error.is_none()));
        assert!(m.critical_points.is_empty());
    }

    #[test]
    fn single_realization_sweep_is_rejected() {
        assert!(sweep_phase_diagram(&small(1), Some(1)).is_err());
        let h = vec![vec![vec![0.5]; 5]];
        assert!(phase_diagram_from_heights(&[0.1, 0.2, 0.3, 0.4, 0.5], &[25.0], &h).is_err());
    }
}
