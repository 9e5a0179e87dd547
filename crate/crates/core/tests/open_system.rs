use floquet_dtc::dynamics::{run_stroboscopic, FloquetPropagator, StateVector, C64};
use floquet_dtc::model::{envelope, ChainSpec, DisorderRealization, ProtocolParams};
use floquet_dtc::open_system::{
    ensemble_average, evolve_trajectory, record_trajectory, trajectory_ensemble, trajectory_seed,
    NoiseSpec, Trajectory,
};
use nalgebra::DMatrix;

const TRAJECTORIES: usize = 1000;

#[test]
fn relaxation_follows_exponential_law() {
    let t1 = 100.0;
    let chain = ChainSpec::noninteracting(1).unwrap();
    let prop = FloquetPropagator::free_evolution(&chain, 20.0, 0.5).unwrap();
    let noise = NoiseSpec::new(vec![1.0 / t1], vec![0.0]).unwrap();
    let excited = StateVector::basis(1, 1).unwrap();
    let avg = trajectory_ensemble(&excited, &prop, &noise, 10, 0.5, TRAJECTORIES, 77).unwrap();
    for (n, z) in avg.mean.magnetization.iter().enumerate() {
        let t = 20.0 * n as f64;
        // |1> is the -1 eigenstate of σz and decays towards |0>.
        let expected = 1.0 - 2.0 * (-t / t1).exp();
        let sigma = ((1.0 - expected * expected) / TRAJECTORIES as f64).sqrt();
        assert!((z - expected).abs() <= 3.0 * sigma + 1e-12, "t={t}: {z} vs {expected} (σ={sigma})");
    }
}

fn coherence(psi: &StateVector) -> f64 {
    let a = psi.amplitudes();
    2.0 * (a[0].conj() * a[1]).re
}

fn coherence_curve(t1: f64, tphi: f64, seed: u64) -> Vec<f64> {
    let chain = ChainSpec::noninteracting(1).unwrap();
    let prop = FloquetPropagator::free_evolution(&chain, 20.0, 0.5).unwrap();
    let gamma_relax = if t1.is_finite() { 1.0 / t1 } else { 0.0 };
    let noise = NoiseSpec::new(vec![gamma_relax], vec![1.0 / tphi]).unwrap();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let plus = StateVector::from_amplitudes(1, vec![C64::new(h, 0.0), C64::new(h, 0.0)]).unwrap();
    let mut sums = vec![0.0; 11];
    for k in 0..TRAJECTORIES {
        let mut traj = Trajectory::new(&prop, &noise, plus.clone(), 0.5, trajectory_seed(seed, k)).unwrap();
        sums[0] += coherence(traj.state());
        for s in sums.iter_mut().skip(1) {
            traj.advance_period().unwrap();
            *s += coherence(traj.state());
        }
    }
    sums.iter().map(|s| s / TRAJECTORIES as f64).collect()
}

#[test]
fn pure_dephasing_follows_exponential_law() {
    let tphi = 80.0;
    for (n, x) in coherence_curve(f64::INFINITY, tphi, 5).iter().enumerate() {
        let t = 20.0 * n as f64;
        let expected = (-t / tphi).exp();
        let sigma = ((1.0 - expected * expected) / TRAJECTORIES as f64).sqrt();
        assert!((x - expected).abs() <= 3.0 * sigma + 1e-12, "t={t}: {x} vs {expected}");
    }
}

#[test]
fn combined_decoherence_decays_at_half_relaxation_plus_dephasing() {
    let (t1, tphi) = (150.0, 120.0);
    for (n, x) in coherence_curve(t1, tphi, 6).iter().enumerate() {
        let t = 20.0 * n as f64;
        let expected = (-t / (2.0 * t1) - t / tphi).exp();
        // Single-trajectory coherence is bounded by 1 in magnitude.
        let sigma = (1.0 / TRAJECTORIES as f64).sqrt();
        assert!((x - expected).abs() <= 3.0 * sigma, "t={t}: {x} vs {expected}");
    }
}

#[test]
fn zero_rates_reproduce_the_closed_system_exactly() {
    let chain = ChainSpec::table_one();
    let params = ProtocolParams::with_default_width(70.0, 25.0, 0.1).unwrap();
    let dis = floquet_dtc::model::sample_disorder(8, 12).unwrap();
    let psi = StateVector::all_zero(8).unwrap();
    let closed = run_stroboscopic(&psi, &chain, &params, &dis, 10, 0.5).unwrap();
    let traj = evolve_trajectory(&psi, &chain, &params, &dis, &NoiseSpec::closed(8), 10, 0.5, 99).unwrap();
    assert_eq!(closed, traj);
}

#[test]
fn trajectories_are_reproducible_from_seed() {
    let chain = ChainSpec::from_mhz(&[1.0, 1.2], Default::default()).unwrap();
    let params = ProtocolParams::with_default_width(70.0, 25.0, 0.1).unwrap();
    let dis = floquet_dtc::model::sample_disorder(3, 1).unwrap();
    let prop = FloquetPropagator::new(&chain, &params, &dis, 0.5).unwrap();
    let noise = NoiseSpec::new(vec![1e-3; 3], vec![2e-3; 3]).unwrap();
    let psi = StateVector::all_zero(3).unwrap();
    let a = record_trajectory(&psi, &prop, &noise, 20, 0.5, 4).unwrap();
    let b = record_trajectory(&psi, &prop, &noise, 20, 0.5, 4).unwrap();
    let c = record_trajectory(&psi, &prop, &noise, 20, 0.5, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let avg = ensemble_average(&[a.clone(), b]).unwrap();
    assert_eq!(avg.count, 2);
}

// Dense Lindblad oracle for small registers.

type Mat = DMatrix<C64>;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn embed(op: &Mat, qubit: usize, n: usize) -> Mat {
    let dim = 1 << n;
    Mat::from_fn(dim, dim, |r, col| {
        let rest = !(1usize << qubit);
        if r & rest != col & rest {
            return c(0.0);
        }
        op[((r >> qubit) & 1, (col >> qubit) & 1)]
    })
}

struct Lindblad {
    jumps: Vec<Mat>,
}

impl Lindblad {
    fn rhs(&self, h: &Mat, rho: &Mat) -> Mat {
        let i = C64::new(0.0, 1.0);
        let mut out = (h * rho - rho * h) * (-i);
        for l in &self.jumps {
            let ld = l.adjoint();
            let ldl = &ld * l;
            out += l * rho * &ld - (&ldl * rho + rho * &ldl) * c(0.5);
        }
        out
    }

    fn rk4(&self, h: &Mat, rho: &Mat, dt: f64) -> Mat {
        let k1 = self.rhs(h, rho);
        let k2 = self.rhs(h, &(rho + &k1 * c(0.5 * dt)));
        let k3 = self.rhs(h, &(rho + &k2 * c(0.5 * dt)));
        let k4 = self.rhs(h, &(rho + &k3 * c(dt)));
        rho + (k1 + k2 * c(2.0) + k3 * c(2.0) + k4) * c(dt / 6.0)
    }
}

#[test]
fn two_qubit_trajectories_match_lindblad_oracle() {
    let n = 2;
    let dim = 4;
    let j = 2.0 * std::f64::consts::PI * 1e-3 * 3.0;
    let chain = ChainSpec::new(2, vec![j]).unwrap();
    let params = ProtocolParams::with_default_width(70.0, 25.0, 0.1).unwrap();
    let dis = DisorderRealization::from_phases(vec![0.4, 2.2]);
    let (g1, gphi) = ([1.0 / 300.0, 1.0 / 500.0], [1.0 / 200.0, 1.0 / 400.0]);
    let noise = NoiseSpec::new(g1.to_vec(), gphi.to_vec()).unwrap();
    let periods = 3;

    let sx = Mat::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
    let sz = Mat::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)]);
    let lower = Mat::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)]);
    let mut jumps = Vec::new();
    for q in 0..n {
        jumps.push(embed(&lower, q, n) * c(g1[q].sqrt()));
        jumps.push(embed(&sz, q, n) * c((0.5 * gphi[q]).sqrt()));
    }
    let lb = Lindblad { jumps };
    let hzz = embed(&sz, 0, n) * embed(&sz, 1, n) * c(j);
    let sx_sum = embed(&sx, 0, n) + embed(&sx, 1, n);
    let vz = Mat::from_fn(dim, dim, |r, col| {
        if r != col {
            return c(0.0);
        }
        let a: f64 = dis.phases.iter().enumerate().map(|(i, p)| if r >> i & 1 == 0 { *p } else { -*p }).sum();
        C64::from_polar(1.0, -a)
    });

    let mut rho = Mat::zeros(dim, dim);
    rho[(0, 0)] = c(1.0);
    let fine = 0.01;
    let amp = params.g() * (1.0 - params.epsilon());
    let mut oracle = Vec::new();
    let z_of = |rho: &Mat| -> Vec<f64> {
        (0..n).map(|q| (embed(&sz, q, n) * rho).trace().re).collect()
    };
    oracle.push(z_of(&rho));
    for _ in 0..periods {
        let steps = (params.t1() / fine).round() as usize;
        let h = params.t1() / steps as f64;
        for k in 0..steps {
            let t = (k as f64 + 0.5) * h;
            let ht = &hzz + &sx_sum * c(amp * envelope(t, &params).unwrap());
            rho = lb.rk4(&ht, &rho, h);
        }
        let steps = (params.t2() / fine).round() as usize;
        for _ in 0..steps {
            rho = lb.rk4(&hzz, &rho, params.t2() / steps as f64);
        }
        rho = &vz * rho * vz.adjoint();
        oracle.push(z_of(&rho));
    }

    let prop = FloquetPropagator::new(&chain, &params, &dis, 0.25).unwrap();
    let psi = StateVector::all_zero(2).unwrap();
    let avg = trajectory_ensemble(&psi, &prop, &noise, periods, 0.25, 4000, 31).unwrap();
    for (p, row) in oracle.iter().enumerate() {
        for q in 0..n {
            let got = avg.mean.per_qubit_z[p][q];
            let se = avg.sem_z[p][q];
            assert!(
                (got - row[q]).abs() <= 3.0 * se + 2e-3,
                "period {p} qubit {q}: trajectories {got} ± {se}, oracle {}",
                row[q]
            );
        }
    }
}
