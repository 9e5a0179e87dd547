//! Truncated Bose-Hubbard model of a transmon chain and the effective ZZ
//! coupling extracted from its two-site spectra.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{ghz_to_rad_per_ns, mhz_to_rad_per_ns, rad_per_ns_to_mhz, DeviceParams};

pub const DEFAULT_LEVELS: usize = 3;
pub const MAX_DIMENSION: usize = 100_000;
/// Minimum squared overlap between a dressed state and its bare label.
pub const ASSIGNMENT_THRESHOLD: f64 = 0.7;
/// Bonds with `|Δ| / g` at or below this are flagged as non-dispersive.
pub const DISPERSIVE_RATIO: f64 = 10.0;

/// Chain of anharmonic oscillators truncated to `levels` states per site.
/// All frequencies in rad/ns.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedChain {
    levels: usize,
    omega: Vec<f64>,
    alpha: Vec<f64>,
    g_nn: Vec<f64>,
}

impl TruncatedChain {
    pub fn new(levels: usize, omega: Vec<f64>, alpha: Vec<f64>, g_nn: Vec<f64>) -> Result<Self> {
        if levels < 2 {
            return Err(invalid("levels", "need at least 2 levels per site"));
        }
        if omega.is_empty() {
            return Err(invalid("omega", "chain needs at least one site"));
        }
        if alpha.len() != omega.len() {
            return Err(Error::DimensionMismatch {
                expected: omega.len(),
                actual: alpha.len(),
            });
        }
        if g_nn.len() + 1 != omega.len() {
            return Err(Error::DimensionMismatch {
                expected: omega.len() - 1,
                actual: g_nn.len(),
            });
        }
        if omega.iter().chain(&alpha).chain(&g_nn).any(|v| !v.is_finite()) {
            return Err(invalid("chain", "frequencies must be finite"));
        }
        let chain = Self {
            levels,
            omega,
            alpha,
            g_nn,
        };
        chain.checked_dim()?;
        Ok(chain)
    }

    /// Builds a chain from laboratory units (GHz for ω and α, MHz for g).
    pub fn from_lab_units(levels: usize, omega_ghz: &[f64], alpha_ghz: &[f64], g_mhz: &[f64]) -> Result<Self> {
        Self::new(
            levels,
            omega_ghz.iter().map(|&f| ghz_to_rad_per_ns(f)).collect(),
            alpha_ghz.iter().map(|&f| ghz_to_rad_per_ns(f)).collect(),
            g_mhz.iter().map(|&f| mhz_to_rad_per_ns(f)).collect(),
        )
    }

    pub fn from_device(device: &DeviceParams, levels: usize) -> Result<Self> {
        device.validate()?;
        Self::from_lab_units(levels, &device.omega, &device.alpha, &device.g_nn)
    }

    pub fn n_sites(&self) -> usize {
        self.omega.len()
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn g_nn(&self) -> &[f64] {
        &self.g_nn
    }

    pub fn dim(&self) -> usize {
        self.checked_dim().unwrap_or(usize::MAX)
    }

    fn checked_dim(&self) -> Result<usize> {
        let mut dim = 1usize;
        for _ in 0..self.omega.len() {
            dim = dim.saturating_mul(self.levels);
            if dim > MAX_DIMENSION {
                return Err(Error::DimensionTooLarge {
                    dim,
                    limit: MAX_DIMENSION,
                });
            }
        }
        Ok(dim)
    }

    /// Two-site chain made of sites `bond` and `bond + 1`.
    pub fn pair(&self, bond: usize) -> Result<Self> {
        if bond + 1 >= self.n_sites() {
            return Err(invalid(
                "bond",
                format!("bond {bond} needs sites {bond} and {} in a {}-site chain", bond + 1, self.n_sites()),
            ));
        }
        Self::new(
            self.levels,
            self.omega[bond..bond + 2].to_vec(),
            self.alpha[bond..bond + 2].to_vec(),
            vec![self.g_nn[bond]],
        )
    }

    /// Same chain with site order reversed.
    pub fn reversed(&self) -> Self {
        let rev = |v: &[f64]| v.iter().rev().copied().collect();
        Self {
            levels: self.levels,
            omega: rev(&self.omega),
            alpha: rev(&self.alpha),
            g_nn: rev(&self.g_nn),
        }
    }

    pub fn with_levels(&self, levels: usize) -> Result<Self> {
        Self::new(levels, self.omega.clone(), self.alpha.clone(), self.g_nn.clone())
    }

    pub fn with_coupling(&self, g_nn: Vec<f64>) -> Result<Self> {
        Self::new(self.levels, self.omega.clone(), self.alpha.clone(), g_nn)
    }

    /// Index of the product state with occupations `occ` (site i is the
    /// i-th least significant digit in base `levels`).
    pub fn index_of(&self, occ: &[usize]) -> usize {
        occ.iter().rev().fold(0, |acc, &n| acc * self.levels + n)
    }

    fn occupation(&self, mut index: usize, site: usize) -> usize {
        for _ in 0..site {
            index /= self.levels;
        }
        index % self.levels
    }
}

/// `Σ ω n + (α/2) n(n-1) + Σ g (a† + a)(a† + a)` in the truncated number
/// basis, including counter-rotating terms.
pub fn build_hamiltonian(chain: &TruncatedChain) -> Result<DMatrix<f64>> {
    let dim = chain.checked_dim()?;
    let d = chain.levels;
    let n = chain.n_sites();
    let mut h = DMatrix::zeros(dim, dim);
    for idx in 0..dim {
        let mut e = 0.0;
        for site in 0..n {
            let k = chain.occupation(idx, site) as f64;
            e += chain.omega[site] * k + 0.5 * chain.alpha[site] * k * (k - 1.0);
        }
        h[(idx, idx)] = e;
    }
    let stride = |site: usize| d.pow(site as u32);
    for bond in 0..n.saturating_sub(1) {
        let g = chain.g_nn[bond];
        if g == 0.0 {
            continue;
        }
        let (sa, sb) = (stride(bond), stride(bond + 1));
        for idx in 0..dim {
            let na = chain.occupation(idx, bond);
            let nb = chain.occupation(idx, bond + 1);
            // x_a x_b with x = a + a†: each factor moves one level up or down.
            for (da, amp_a) in ladder(na, d) {
                for (db, amp_b) in ladder(nb, d) {
                    let target = (idx as isize + da * sa as isize + db * sb as isize) as usize;
                    h[(target, idx)] += g * amp_a * amp_b;
                }
            }
        }
    }
    Ok(h)
}

fn ladder(n: usize, d: usize) -> impl Iterator<Item = (isize, f64)> {
    let down = (n > 0).then(|| (-1, (n as f64).sqrt()));
    let up = (n + 1 < d).then(|| (1, ((n + 1) as f64).sqrt()));
    down.into_iter().chain(up)
}

/// Effective ZZ for one bond. `zeta` is the full level-splitting combination
/// `E11 - E10 - E01 + E00`; `table_value = zeta / 2` is the quantity
/// comparable to tabulated device couplings, and `coefficient = zeta / 4`
/// multiplies `σz σz` in the two-qubit Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZzCoupling {
    pub zeta: f64,
    pub table_value: f64,
    pub coefficient: f64,
    /// Smallest squared overlap among the four assigned dressed states.
    pub min_overlap: f64,
}

impl ZzCoupling {
    fn from_zeta(zeta: f64, min_overlap: f64) -> Self {
        Self {
            zeta,
            table_value: 0.5 * zeta,
            coefficient: 0.25 * zeta,
            min_overlap,
        }
    }

    pub fn to_mhz(self) -> Self {
        Self {
            zeta: rad_per_ns_to_mhz(self.zeta),
            table_value: rad_per_ns_to_mhz(self.table_value),
            coefficient: rad_per_ns_to_mhz(self.coefficient),
            min_overlap: self.min_overlap,
        }
    }
}

/// Dressed energies of the computational states of a two-site chain by
/// maximum-overlap assignment, ordered `E00, E01, E10, E11` with the first
/// digit on site 0.
pub fn dressed_qubit_energies(pair: &TruncatedChain) -> Result<([f64; 4], f64)> {
    if pair.n_sites() != 2 {
        return Err(invalid("chain", "dressed qubit energies need exactly two sites"));
    }
    let h = build_hamiltonian(pair)?;
    let eig = SymmetricEigen::new(h);
    let mut energies = [0.0; 4];
    let mut min_overlap = f64::INFINITY;
    let mut used = Vec::with_capacity(4);
    for (slot, occ) in [[0, 0], [0, 1], [1, 0], [1, 1]].iter().enumerate() {
        let bare = pair.index_of(occ);
        let (best, overlap) = (0..eig.eigenvalues.len())
            .map(|k| (k, eig.eigenvectors[(bare, k)].powi(2)))
            .fold((0, -1.0), |b, c| if c.1 > b.1 { c } else { b });
        if overlap < ASSIGNMENT_THRESHOLD || used.contains(&best) {
            return Err(Error::AmbiguousAssignment {
                overlap,
                threshold: ASSIGNMENT_THRESHOLD,
            });
        }
        used.push(best);
        min_overlap = min_overlap.min(overlap);
        energies[slot] = eig.eigenvalues[best];
    }
    Ok((energies, min_overlap))
}

/// Effective ZZ on bond `bond` (sites `bond`, `bond + 1`) from two-site
/// exact diagonalisation, in rad/ns.
pub fn effective_zz(chain: &TruncatedChain, bond: usize) -> Result<ZzCoupling> {
    let pair = chain.pair(bond)?;
    if pair.g_nn[0] == 0.0 {
        return Ok(ZzCoupling::from_zeta(0.0, 1.0));
    }
    let (e, overlap) = dressed_qubit_energies(&pair)?;
    Ok(ZzCoupling::from_zeta(e[3] - e[2] - e[1] + e[0], overlap))
}

/// Second-order dispersive estimate of `zeta` for bond `bond`:
/// `2 g^2 (1/(Δ - α_b) - 1/(Δ + α_a))` with `Δ = ω_a - ω_b`.
pub fn dispersive_zz_estimate(chain: &TruncatedChain, bond: usize) -> Result<f64> {
    let pair = chain.pair(bond)?;
    let delta = pair.omega[0] - pair.omega[1];
    let g = pair.g_nn[0];
    Ok(2.0 * g * g * (1.0 / (delta - pair.alpha[1]) - 1.0 / (delta + pair.alpha[0])))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BondReport {
    pub bond: usize,
    /// `ω_{i+1} - ω_i` in MHz.
    pub detuning_mhz: f64,
    pub g_mhz: f64,
    /// `|Δ| / g`.
    pub ratio: f64,
    /// ZZ in MHz; `None` when the dressed states could not be assigned.
    pub zz_mhz: Option<ZzCoupling>,
    pub flagged: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZigzagReport {
    pub levels: usize,
    pub bonds: Vec<BondReport>,
}

impl ZigzagReport {
    pub fn all_dispersive(&self) -> bool {
        self.bonds.iter().all(|b| !b.flagged)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "bond",
            "detuning_mhz",
            "g_mhz",
            "ratio",
            "zeta_mhz",
            "j_table_mhz",
            "zz_coefficient_mhz",
            "min_overlap",
            "flagged",
        ])?;
        for b in &self.bonds {
            let zz = |f: fn(&ZzCoupling) -> f64| b.zz_mhz.as_ref().map_or(String::new(), |z| f(z).to_string());
            w.write_record([
                b.bond.to_string(),
                b.detuning_mhz.to_string(),
                b.g_mhz.to_string(),
                b.ratio.to_string(),
                zz(|z| z.zeta),
                zz(|z| z.table_value),
                zz(|z| z.coefficient),
                zz(|z| z.min_overlap),
                b.flagged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}

/// Per-bond detunings, dispersive ratios and pairwise effective ZZ.
pub fn zigzag_report(device: &DeviceParams, levels: usize) -> Result<ZigzagReport> {
    let chain = TruncatedChain::from_device(device, levels)?;
    let bonds = (0..chain.n_sites() - 1)
        .map(|bond| {
            let detuning = device.omega[bond + 1] - device.omega[bond];
            let detuning_mhz = detuning * 1e3;
            let g_mhz = device.g_nn[bond];
            let ratio = if g_mhz == 0.0 {
                f64::INFINITY
            } else {
                detuning_mhz.abs() / g_mhz.abs()
            };
            let flagged = !(ratio > DISPERSIVE_RATIO);
            let (zz_mhz, note) = match effective_zz(&chain, bond) {
                Ok(zz) => (Some(zz.to_mhz()), None),
                Err(e) => (None, Some(e.to_string())),
            };
            BondReport {
                bond,
                detuning_mhz,
                g_mhz,
                ratio,
                zz_mhz,
                flagged,
                note,
            }
        })
        .collect();
    Ok(ZigzagReport { levels, bonds })
}
