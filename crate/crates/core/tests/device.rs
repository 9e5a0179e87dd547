use floquet_dtc::device_model::{
    build_hamiltonian, dispersive_zz_estimate, effective_zz, zigzag_report, TruncatedChain,
};
use floquet_dtc::model::{rad_per_ns_to_mhz, DeviceParams, TABLE_ONE_JZ_MHZ};
use nalgebra::{DMatrix, SymmetricEigen};

fn q1_q2(levels: usize, g_mhz: f64) -> TruncatedChain {
    TruncatedChain::from_lab_units(levels, &[5.182, 4.648], &[-0.240, -0.240], &[g_mhz]).unwrap()
}

#[test]
fn table_pair_against_perturbation_and_table() {
    let chain = q1_q2(3, 19.7);
    let zz = effective_zz(&chain, 0).unwrap();
    let estimate = dispersive_zz_estimate(&chain, 0).unwrap();
    assert!(rel(zz.zeta, estimate) < 0.10, "ED {} vs PT {estimate}", zz.zeta);
    let table = rad_per_ns_to_mhz(zz.table_value).abs();
    let quoted = TABLE_ONE_JZ_MHZ[0];
    assert!(table > quoted / 2.0 && table < quoted * 2.0, "{table} MHz");
    assert!(zz.min_overlap > 0.9);
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn dressed_levels_follow_second_order_perturbation() {
    let chain = q1_q2(3, 19.7);
    let h = build_hamiltonian(&chain).unwrap();
    assert!((&h - h.transpose()).amax() < 1e-12);
    let h0 = DMatrix::from_diagonal(&h.diagonal());
    let v = &h - &h0;
    let eig = SymmetricEigen::new(h.clone());
    for n in 0..h.nrows() {
        let e0 = h0[(n, n)];
        let shift: f64 = (0..h.nrows())
            .filter(|&m| m != n)
            .map(|m| v[(m, n)].powi(2) / (e0 - h0[(m, m)]))
            .sum();
        let pt = e0 + v[(n, n)] + shift;
        let nearest = eig
            .eigenvalues
            .iter()
            .map(|e| (e - pt).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(nearest < 5e-4, "level {n}: PT {pt}, nearest ED distance {nearest}");
    }
}

#[test]
fn quadratic_scaling_in_coupling() {
    let gs: Vec<f64> = (1..=10).map(f64::from).collect();
    let zetas: Vec<f64> = gs.iter().map(|&g| effective_zz(&q1_q2(3, g), 0).unwrap().zeta.abs()).collect();
    let xs: Vec<f64> = gs.iter().map(|g| g.ln()).collect();
    let ys: Vec<f64> = zetas.iter().map(|z| z.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope - 2.0).abs() < 0.05, "slope {slope}");

    let single = effective_zz(&q1_q2(3, 19.7), 0).unwrap().zeta;
    let double = effective_zz(&q1_q2(3, 39.4), 0).unwrap().zeta;
    assert!(rel(double / single, 4.0) < 0.15, "ratio {}", double / single);
}

#[test]
fn zero_coupling_gives_zero() {
    assert_eq!(effective_zz(&q1_q2(3, 0.0), 0).unwrap().zeta, 0.0);
}

#[test]
fn truncation_is_converged() {
    let d3 = effective_zz(&q1_q2(3, 19.7), 0).unwrap().zeta;
    let d4 = effective_zz(&q1_q2(4, 19.7), 0).unwrap().zeta;
    assert!(rel(d4, d3) < 0.05);
    // Two levels per site carry no ZZ at all beyond counter-rotating terms.
    let d2 = effective_zz(&q1_q2(2, 19.7), 0).unwrap().zeta;
    assert!(d2.abs() < 0.05 * d3.abs());
}

#[test]
fn symmetric_under_site_swap() {
    let chain = q1_q2(3, 19.7);
    let a = effective_zz(&chain, 0).unwrap().zeta;
    let b = effective_zz(&chain.reversed(), 0).unwrap().zeta;
    // Energies near 60 rad/ns cancel down to ζ, so roundoff sets the floor.
    assert!((a - b).abs() < 1e-9 * a.abs(), "{a} vs {b}");
}

#[test]
fn single_site_spectrum() {
    let c = TruncatedChain::new(3, vec![30.0], vec![-1.5], vec![]).unwrap();
    let h = build_hamiltonian(&c).unwrap();
    assert_eq!(h.diagonal().as_slice(), &[0.0, 30.0, 58.5]);
}

#[test]
fn table_device_is_dispersive_on_every_bond() {
    let report = zigzag_report(&DeviceParams::table_one(), 3).unwrap();
    assert_eq!(report.bonds.len(), 7);
    for b in &report.bonds {
        assert!(b.ratio > 20.0, "bond {}: ratio {}", b.bond, b.ratio);
        assert!(!b.flagged);
        let zz = b.zz_mhz.unwrap();
        assert!(zz.table_value.abs() > TABLE_ONE_JZ_MHZ[b.bond] / 2.0);
        assert!(zz.table_value.abs() < TABLE_ONE_JZ_MHZ[b.bond] * 2.0);
    }
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 8);
    let mut json = Vec::new();
    report.write_json(&mut json).unwrap();
    let parsed: serde_json::Value = serde_json::from_slice(&json).unwrap();
    assert_eq!(parsed["bonds"].as_array().unwrap().len(), 7);
}

fn device_with_omega(omega: Vec<f64>) -> DeviceParams {
    let n = omega.len();
    DeviceParams::new(omega, vec![-0.24; n], vec![19.0; n - 1], vec![15.0; n], vec![5.0; n]).unwrap()
}

#[test]
fn uniform_frequencies_are_flagged() {
    let report = zigzag_report(&device_with_omega(vec![5.0; 4]), 3).unwrap();
    assert!(report.bonds.iter().all(|b| b.flagged && b.detuning_mhz == 0.0));
    assert!(!report.all_dispersive());
}

#[test]
fn alternating_chain_has_alternating_detunings() {
    let omega = (0..6).map(|i| if i % 2 == 0 { 5.5 } else { 4.5 }).collect();
    let report = zigzag_report(&device_with_omega(omega), 3).unwrap();
    for pair in report.bonds.windows(2) {
        assert!(pair[0].detuning_mhz * pair[1].detuning_mhz < 0.0);
    }
    assert!(report.all_dispersive());
}
