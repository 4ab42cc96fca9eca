use jldict::dict::{init_dictionary, ksvd_sweep, train, Dictionary, TrainConfig};
use jldict::linalg::normalize_columns;
use jldict::sparse::{residual_error, SparseCoderConfig};
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn unit_norm(d: &Dictionary) -> bool {
    d.matrix()
        .column_iter()
        .all(|c| (c.norm() - 1.0).abs() <= 1e-10)
}

/// Classes share a 5-atom support drawn from a planted 16 x 32 dictionary.
fn planted_classes(seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let (p, k, s, classes, per_class) = (16, 32, 5, 8, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d0 = gaussian(p, k, &mut rng);
    normalize_columns(&mut d0);
    let n = classes * per_class;
    let mut x0 = DMatrix::zeros(k, n);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        let support = sample(&mut rng, k, s).into_vec();
        for j in c * per_class..(c + 1) * per_class {
            for &i in &support {
                x0[(i, j)] = StandardNormal.sample(&mut rng);
            }
            labels.push(c);
        }
    }
    (&d0 * x0, labels)
}

#[test]
fn planted_dictionary_is_fitted() {
    let (z, labels) = planted_classes(7);
    let cfg = TrainConfig {
        atoms_per_class: 4,
        seed: 1,
        coder: SparseCoderConfig {
            sigma2: 1e-3,
            ..Default::default()
        },
        ..Default::default()
    };
    let (d, x, report) = train(&z, &labels, &cfg).unwrap();
    assert_eq!(d.atom_count(), 32);
    assert!(unit_norm(&d));
    let loss = residual_error(&z, d.matrix(), &x).unwrap();
    assert_eq!(Some(&loss), report.loss_trajectory.last());
    assert!(loss <= 1e-2 * z.norm_squared(), "{loss} vs {}", z.norm_squared());
}

#[test]
fn stopping_rules() {
    let (z, labels) = planted_classes(1001);
    let base = TrainConfig {
        atoms_per_class: 4,
        max_outer: 12,
        ..Default::default()
    };
    let (d, _, full) = train(&z, &labels, &base).unwrap();
    assert!(unit_norm(&d));
    assert_eq!(full.outer_iterations, 12);
    assert_eq!(full.loss_trajectory.len(), 12);
    assert!(!full.converged);

    let cfg = TrainConfig {
        min_rel_change: 0.5,
        ..base.clone()
    };
    let (_, _, early) = train(&z, &labels, &cfg).unwrap();
    let t = &early.loss_trajectory;
    assert!(early.converged && t.len() < 12);
    let (a, b) = (t[t.len() - 2], t[t.len() - 1]);
    assert!((a - b).abs() / a < 0.5);
    assert!(t.windows(2).rev().skip(1).all(|w| (w[0] - w[1]).abs() / w[0] >= 0.5));
    assert_eq!(t[..], full.loss_trajectory[..t.len()]);

    let cfg = TrainConfig {
        tol: f64::INFINITY,
        ..base
    };
    let (_, _, once) = train(&z, &labels, &cfg).unwrap();
    assert_eq!((once.outer_iterations, once.converged), (1, true));
}

#[test]
fn training_is_deterministic() {
    let (z, labels) = planted_classes(3);
    let cfg = TrainConfig {
        atoms_per_class: 4,
        max_outer: 4,
        seed: 11,
        ..Default::default()
    };
    let a = train(&z, &labels, &cfg).unwrap();
    let b = train(&z, &labels, &cfg).unwrap();
    assert_eq!(a.2, b.2);
    assert!(a.0.matrix().iter().zip(b.0.matrix().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.1.iter().zip(b.1.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn sweep_never_increases_residual() {
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, k, n) = (6, 10, 25);
        let d = init_dictionary(p, k, seed).unwrap();
        let z = gaussian(p, n, &mut rng);
        let x = DMatrix::from_fn(k, n, |_, _| {
            if rng.random::<f64>() < 0.3 {
                StandardNormal.sample(&mut rng)
            } else {
                0.0
            }
        });
        let before = residual_error(&z, d.matrix(), &x).unwrap();
        let (d2, x2) = ksvd_sweep(&d, &z, &x).unwrap();
        let after = residual_error(&z, d2.matrix(), &x2).unwrap();
        assert!(after <= before * (1.0 + 1e-12), "seed {seed}: {before} -> {after}");
        assert!(unit_norm(&d2));
    }
}

/// Best rank-1 error of a 3x3 block by exhaustive search over unit directions.
fn brute_force_rank_one(e: &DMatrix<f64>) -> f64 {
    let steps = 400;
    let mut best = f64::INFINITY;
    for a in 0..=steps {
        let theta = std::f64::consts::PI * a as f64 / steps as f64;
        for b in 0..2 * steps {
            let phi = std::f64::consts::PI * b as f64 / steps as f64;
            let u = nalgebra::Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            let proj = e.tr_mul(&u).norm_squared();
            best = best.min(e.norm_squared() - proj);
        }
    }
    best
}

#[test]
fn sweep_matches_brute_force_rank_one() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let z = gaussian(3, 3, &mut rng);
        let d = Dictionary::from_matrix(DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0])).unwrap();
        let x = DMatrix::from_element(1, 3, 1.0);
        let (d2, x2) = ksvd_sweep(&d, &z, &x).unwrap();
        let got = residual_error(&z, d2.matrix(), &x2).unwrap();
        let brute = brute_force_rank_one(&z);
        assert!(got <= brute + 1e-12, "{got} vs {brute}");
        assert!(got >= brute - 1e-3 * z.norm_squared(), "{got} vs {brute}");
    }
}

#[test]
fn replacement_reduces_unused_atoms() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = init_dictionary(5, 8, 2).unwrap();
    let z = gaussian(5, 20, &mut rng);
    let mut x = DMatrix::zeros(8, 20);
    for j in 0..20 {
        x[(j % 3, j)] = 1.0;
    }
    let unused = |x: &DMatrix<f64>| x.row_iter().filter(|r| r.iter().all(|&v| v == 0.0)).count();
    let (_, x2) = ksvd_sweep(&d, &z, &x).unwrap();
    assert!(unused(&x2) < unused(&x));
}
