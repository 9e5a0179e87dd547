//! Physical configuration of the driven chain: couplings, drive protocol,
//! pulse envelope, disorder and device parameters.
//!
//! Internal units are nanoseconds and angular frequency in rad/ns. Values
//! quoted as ordinary frequencies (GHz, MHz) are converted on ingestion with
//! [`ghz_to_rad_per_ns`] and [`mhz_to_rad_per_ns`].

use std::f64::consts::{PI, TAU};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{invalid, Result};

/// Name of the pseudo-random stream used for disorder sampling. Bump the
/// suffix if the derivation of phases from the stream ever changes.
pub const DISORDER_STREAM: &str = "chacha8-u53-v1";

pub fn ghz_to_rad_per_ns(f_ghz: f64) -> f64 {
    TAU * f_ghz
}

pub fn mhz_to_rad_per_ns(f_mhz: f64) -> f64 {
    TAU * f_mhz * 1e-3
}

pub fn rad_per_ns_to_mhz(w: f64) -> f64 {
    w / TAU * 1e3
}

/// How tabulated ZZ strengths map onto the `J σ^z σ^z` coefficient.
///
/// `Table` treats the quoted value as half the conditional frequency shift
/// `ζ = E11 - E10 - E01 + E00`, so the Pauli coefficient is `value / 2`.
/// This is the reading under which the device parameters (frequencies,
/// anharmonicities, couplings) reproduce the quoted ZZ strengths; see
/// [`crate::device_model::effective_zz`]. `Coefficient` uses the value as
/// the Pauli coefficient directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ZzConvention {
    #[default]
    Table,
    Coefficient,
}

impl ZzConvention {
    /// Factor converting a quoted ZZ value into the Pauli coefficient.
    pub fn coefficient_factor(self) -> f64 {
        match self {
            ZzConvention::Table => 0.5,
            ZzConvention::Coefficient => 1.0,
        }
    }
}

/// Open chain of `n_qubits` spins with nearest-neighbour `J_i σ^z_i σ^z_{i+1}`
/// couplings (rad/ns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    n_qubits: usize,
    j_zz: Vec<f64>,
}

impl ChainSpec {
    pub fn new(n_qubits: usize, j_zz: Vec<f64>) -> Result<Self> {
        if n_qubits == 0 {
            return Err(invalid("n_qubits", "must be at least 1"));
        }
        if j_zz.len() + 1 != n_qubits {
            return Err(invalid(
                "j_zz",
                format!("expected {} bonds for {n_qubits} qubits, got {}", n_qubits - 1, j_zz.len()),
            ));
        }
        if let Some(bad) = j_zz.iter().find(|j| !j.is_finite()) {
            return Err(invalid("j_zz", format!("non-finite coupling {bad}")));
        }
        Ok(Self { n_qubits, j_zz })
    }

    /// Chain with every coupling set to zero.
    pub fn noninteracting(n_qubits: usize) -> Result<Self> {
        Self::new(n_qubits, vec![0.0; n_qubits.saturating_sub(1)])
    }

    /// Builds a chain from ZZ strengths quoted in MHz (ordinary frequency).
    pub fn from_mhz(values_mhz: &[f64], convention: ZzConvention) -> Result<Self> {
        let factor = convention.coefficient_factor();
        let j = values_mhz
            .iter()
            .map(|&v| factor * mhz_to_rad_per_ns(v))
            .collect();
        Self::new(values_mhz.len() + 1, j)
    }

    /// The eight-qubit device chain with its tabulated ZZ strengths.
    pub fn table_one() -> Self {
        Self::from_mhz(&TABLE_ONE_JZ_MHZ, ZzConvention::Table).expect("static table is valid")
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Pauli coefficients `J_i` in rad/ns.
    pub fn j_zz(&self) -> &[f64] {
        &self.j_zz
    }

    pub fn dim(&self) -> usize {
        1usize << self.n_qubits
    }
}

/// One configuration of the three-interval drive.
///
/// The drive strength is not free: `g = π / (2 t1)` so that an undistorted,
/// noninteracting pulse is an exact π rotation. The envelope normalisation
/// constant is computed once here.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolParams {
    t1: f64,
    t2: f64,
    epsilon: f64,
    g: f64,
    w: f64,
    #[serde(skip)]
    envelope_scale: f64,
}

impl ProtocolParams {
    pub fn new(t1: f64, t2: f64, epsilon: f64, w: f64) -> Result<Self> {
        if !(t1.is_finite() && t1 > 0.0) {
            return Err(invalid("t1", format!("must be positive, got {t1}")));
        }
        if !(t2.is_finite() && t2 >= 0.0) {
            return Err(invalid("t2", format!("must be non-negative, got {t2}")));
        }
        if !(epsilon.is_finite() && (0.0..1.0).contains(&epsilon)) {
            return Err(invalid("epsilon", format!("must lie in [0, 1), got {epsilon}")));
        }
        if !(w.is_finite() && w > 0.0 && 4.0 * w <= t1) {
            return Err(invalid(
                "w",
                format!("envelope support 4w must satisfy 0 < 4w <= t1 = {t1}, got w = {w}"),
            ));
        }
        let g = derive_drive_strength(t1)?;
        let envelope_scale = t1 / raw_envelope_integral(w);
        Ok(Self {
            t1,
            t2,
            epsilon,
            g,
            w,
            envelope_scale,
        })
    }

    /// Uses the default envelope width `w = t1 / 8`.
    pub fn with_default_width(t1: f64, t2: f64, epsilon: f64) -> Result<Self> {
        Self::new(t1, t2, epsilon, t1 / 8.0)
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn t2(&self) -> f64 {
        self.t2
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    /// Drive period `T = t1 + t2`; the virtual-Z interval takes no time.
    pub fn period(&self) -> f64 {
        self.t1 + self.t2
    }

    /// Support `[t1/2 - 2w, t1/2 + 2w]` of the pulse envelope.
    pub fn envelope_support(&self) -> (f64, f64) {
        let c = 0.5 * self.t1;
        (c - 2.0 * self.w, c + 2.0 * self.w)
    }

    /// Envelope value without the domain check; zero outside the support.
    pub(crate) fn envelope_unchecked(&self, t: f64) -> f64 {
        let (lo, hi) = self.envelope_support();
        if t < lo || t > hi {
            return 0.0;
        }
        let sigma = fwhm_to_sigma(self.w);
        let x = t - 0.5 * self.t1;
        let value = (-x * x / (2.0 * sigma * sigma)).exp() - edge_baseline(self.w);
        self.envelope_scale * value.max(0.0)
    }
}

fn fwhm_to_sigma(w: f64) -> f64 {
    w / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

// Gaussian value at the support edge, 2w from the centre.
fn edge_baseline(w: f64) -> f64 {
    let sigma = fwhm_to_sigma(w);
    (-(2.0 * w).powi(2) / (2.0 * sigma * sigma)).exp()
}

// Integral of the baseline-shifted Gaussian over its support.
fn raw_envelope_integral(w: f64) -> f64 {
    let sigma = fwhm_to_sigma(w);
    let half = 2.0 * w;
    sigma * (2.0 * PI).sqrt() * erf(half / (sigma * std::f64::consts::SQRT_2))
        - edge_baseline(w) * 2.0 * half
}

/// Pulse envelope `f(t)` on `[0, t1]`.
///
/// A Gaussian of FWHM `w` centred at `t1/2`, shifted down by its value at
/// `t1/2 ± 2w` so it vanishes continuously at the edges of its support, and
/// scaled so that `(1/t1) ∫ f dt = 1`.
pub fn envelope(t: f64, params: &ProtocolParams) -> Result<f64> {
    if !(0.0..=params.t1).contains(&t) {
        return Err(crate::error::Error::TimeOutOfRange { t, t1: params.t1 });
    }
    Ok(params.envelope_unchecked(t))
}

/// `g = π / (2 t1)`.
pub fn derive_drive_strength(t1: f64) -> Result<f64> {
    if !(t1.is_finite() && t1 > 0.0) {
        return Err(invalid("t1", format!("must be positive, got {t1}")));
    }
    Ok(PI / (2.0 * t1))
}

/// Per-qubit virtual-Z angles `φ_i ∈ [0, π)`, applied as `exp(-i φ_i σ^z_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderRealization {
    pub phases: Vec<f64>,
    pub seed: u64,
}

impl DisorderRealization {
    /// All phases zero (no disorder).
    pub fn clean(n_qubits: usize) -> Self {
        Self {
            phases: vec![0.0; n_qubits],
            seed: 0,
        }
    }

    pub fn from_phases(phases: Vec<f64>) -> Self {
        Self { phases, seed: 0 }
    }
}

/// Draws `n_qubits` i.i.d. phases uniform on `[0, π)` from the
/// [`DISORDER_STREAM`]: ChaCha8 seeded with `seed`, one `u64` per qubit,
/// top 53 bits mapped to `[0, 1)`.
pub fn sample_disorder(n_qubits: usize, seed: u64) -> Result<DisorderRealization> {
    if n_qubits == 0 {
        return Err(invalid("n_qubits", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let below_pi = f64::from_bits(PI.to_bits() - 1);
    let phases = (0..n_qubits)
        .map(|_| {
            let unit = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            (unit * PI).min(below_pi)
        })
        .collect();
    Ok(DisorderRealization { phases, seed })
}

/// SplitMix64 finaliser, used as the stable hash for derived seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// `base ⊕ hash(parts)` where the hash chains [`splitmix64`] over `parts`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let hash = parts
        .iter()
        .fold(0x5EED_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)));
    base ^ hash
}

pub const TABLE_ONE_OMEGA_GHZ: [f64; 8] = [5.182, 4.648, 5.146, 4.601, 5.093, 4.560, 5.118, 4.616];
pub const TABLE_ONE_ALPHA_GHZ: [f64; 8] = [-0.240, -0.240, -0.239, -0.240, -0.239, -0.239, -0.239, -0.242];
pub const TABLE_ONE_T1_US: [f64; 8] = [15.04, 16.79, 14.95, 16.97, 15.86, 15.11, 12.27, 12.54];
pub const TABLE_ONE_TPHI_US: [f64; 8] = [10.03, 3.86, 18.51, 3.30, 12.99, 2.98, 23.27, 3.51];
pub const TABLE_ONE_G_MHZ: [f64; 7] = [19.7, 19.6, 19.1, 19.1, 19.2, 19.3, 19.6];
pub const TABLE_ONE_JZ_MHZ: [f64; 7] = [1.0, 1.2, 1.1, 1.3, 1.1, 0.9, 1.2];

/// Transmon device parameters in laboratory units: GHz for `omega` and
/// `alpha` (ordinary frequency), MHz for `g_nn`, µs for the coherence times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub omega: Vec<f64>,
    pub alpha: Vec<f64>,
    pub g_nn: Vec<f64>,
    pub t1_relax: Vec<f64>,
    pub t_phi: Vec<f64>,
}

impl DeviceParams {
    pub fn new(
        omega: Vec<f64>,
        alpha: Vec<f64>,
        g_nn: Vec<f64>,
        t1_relax: Vec<f64>,
        t_phi: Vec<f64>,
    ) -> Result<Self> {
        let device = Self {
            omega,
            alpha,
            g_nn,
            t1_relax,
            t_phi,
        };
        device.validate()?;
        Ok(device)
    }

    pub fn table_one() -> Self {
        Self {
            omega: TABLE_ONE_OMEGA_GHZ.to_vec(),
            alpha: TABLE_ONE_ALPHA_GHZ.to_vec(),
            g_nn: TABLE_ONE_G_MHZ.to_vec(),
            t1_relax: TABLE_ONE_T1_US.to_vec(),
            t_phi: TABLE_ONE_TPHI_US.to_vec(),
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.omega.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.omega.len();
        if n == 0 {
            return Err(invalid("omega", "device needs at least one qubit"));
        }
        for (name, len) in [
            ("alpha", self.alpha.len()),
            ("t1_relax", self.t1_relax.len()),
            ("t_phi", self.t_phi.len()),
        ] {
            if len != n {
                return Err(invalid(name, format!("expected {n} entries, got {len}")));
            }
        }
        if self.g_nn.len() + 1 != n {
            return Err(invalid(
                "g_nn",
                format!("expected {} couplings, got {}", n - 1, self.g_nn.len()),
            ));
        }
        if self.t1_relax.iter().chain(&self.t_phi).any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(invalid("coherence times", "T1 and Tphi must be positive"));
        }
        if self.alpha.iter().any(|&a| !(a < 0.0)) {
            return Err(invalid("alpha", "transmon anharmonicities must be negative"));
        }
        Ok(())
    }
}
