use jldict::data::{standardize, LabeledDataset};
use jldict::embed::*;
use jldict::linalg::sym_eigen_desc;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Standardized random data with every class present.
fn instance(d: usize, c: usize, n: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<usize>) {
    let means = gaussian(d, c, rng) * 2.0;
    let labels: Vec<usize> = (0..n).map(|j| if j < c { j } else { rng.random_range(0..c) }).collect();
    let mut y = gaussian(d, n, rng);
    for (j, &l) in labels.iter().enumerate() {
        let mut col = y.column_mut(j);
        col += means.column(l);
    }
    let names = (0..c).map(|i| i.to_string()).collect();
    let ds = standardize(&LabeledDataset::new(y, labels, names).unwrap()).unwrap();
    (ds.y, ds.labels)
}

fn random_orthonormal(d: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    gaussian(d, p, rng).qr().q().columns(0, p).into_owned()
}

fn linear_u(model: &ProjectionModel) -> &DMatrix<f64> {
    match &model.kind {
        ProjectionKind::Linear { u } => u,
        _ => panic!("expected a linear model"),
    }
}

#[test]
fn linear_projection_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..50 {
        let d = rng.random_range(2..=64);
        let c = rng.random_range(2..=10);
        let n = rng.random_range(c.max(10)..=500);
        let p = rng.random_range(1..=d);
        let (y, labels) = instance(d, c, n, &mut rng);
        let h = one_hot_labels(&labels, c).unwrap();
        let model = fit_mspca(&y, &h, p).unwrap();
        let u = linear_u(&model);
        let s = scatter_matrix(&y, &h).unwrap();
        let s_norm = s.norm();

        let gram = u.transpose() * u;
        let ortho = (gram - DMatrix::identity(p, p)).abs().max();
        assert!(ortho <= 1e-8, "trial {trial}: UᵀU − I = {ortho}");

        for (i, col) in u.column_iter().enumerate() {
            let resid = (&s * col - col * model.eigenvalues[i]).norm();
            assert!(resid <= 1e-6 * s_norm, "trial {trial}: eigen-residual {resid}");
        }

        let (values, _) = sym_eigen_desc(&s).unwrap();
        let tol = RANK_TOL * s.trace();
        let rank = values.iter().filter(|&&v| v > tol).count();
        assert!(rank <= d.min(c), "trial {trial}: rank {rank}");

        let captured = (u.transpose() * &s * u).trace();
        let top: f64 = values[..p].iter().sum();
        assert!((captured - top).abs() <= 1e-9 * top.abs().max(1.0), "trial {trial}: {captured} vs {top}");
        for _ in 0..100 {
            let q = random_orthonormal(d, p, &mut rng);
            assert!((q.transpose() * &s * &q).trace() <= captured * (1.0 + 1e-12));
        }

        let probes = gaussian(d, 20, &mut rng);
        let z = transform(&model, &probes).unwrap();
        for j in 0..20 {
            assert!(z.column(j).norm() <= probes.column(j).norm() * (1.0 + 1e-12));
        }
    }
}

#[test]
fn linear_kernel_matches_primal() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (y, labels) = instance(10, 4, 20, &mut rng);
    let h = one_hot_labels(&labels, 4).unwrap();
    let p = 3;
    let primal = fit_mspca(&y, &h, p).unwrap();
    let kernel = fit_mkspca(&y, &h, p, Kernel::Linear, None).unwrap();
    let zp = transform(&primal, &y).unwrap();
    let zk = transform(&kernel, &y).unwrap();
    let gp = zp.transpose() * &zp;
    let gk = zk.transpose() * &zk;
    let diff = (&gp - &gk).abs().max();
    assert!(diff <= 1e-6, "{diff}");
    for (a, b) in primal.eigenvalues.iter().zip(&kernel.eigenvalues) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
    }
}

#[test]
fn gaussian_kernel_constraint() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (y, labels) = instance(6, 3, 40, &mut rng);
    let h = one_hot_labels(&labels, 3).unwrap();
    let bandwidth = median_bandwidth(&y);
    let model = fit_mkspca(&y, &h, 10, Kernel::Gaussian { bandwidth }, None).unwrap();
    let ProjectionKind::Kernel { v, kernel, .. } = &model.kind else {
        panic!("expected kernel model")
    };
    let k = kernel.gram(&y);
    let vkv = v.transpose() * &k * v;
    assert!((vkv - DMatrix::identity(10, 10)).abs().max() <= 1e-6);
    assert!(model.eigenvalues.windows(2).all(|w| w[0] >= w[1] - 1e-9));
    // training features have norm at most one when VᵀKV = I
    let z = transform(&model, &y).unwrap();
    assert!(z.column_iter().all(|c| c.norm() <= 1.0 + 1e-6));
}

#[test]
fn orthogonal_full_projection_preserves_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (y, labels) = instance(8, 3, 60, &mut rng);
    let model = fit_mspca(&y, &one_hot_labels(&labels, 3).unwrap(), 8).unwrap();
    let report = distortion_report(&model, &y, 200, 1).unwrap();
    assert!((report.min - 1.0).abs() < 1e-9 && (report.max - 1.0).abs() < 1e-9);
    assert!(report.min <= report.mean && report.mean <= report.max);
    assert_eq!(report.histogram.iter().map(|b| b.count).sum::<usize>(), report.ratios.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn projection_is_orthonormal_and_contractive(
        seed in any::<u64>(),
        d in 2usize..20,
        c in 2usize..6,
        extra in 0usize..40,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = c + 5 + extra;
        let (y, labels) = instance(d, c, n, &mut rng);
        let p = rng.random_range(1..=d);
        let model = fit_mspca(&y, &one_hot_labels(&labels, c).unwrap(), p).unwrap();
        let u = linear_u(&model);
        prop_assert!((u.transpose() * u - DMatrix::identity(p, p)).abs().max() <= 1e-8);
        let q = gaussian(d, 1, &mut rng);
        prop_assert!(transform(&model, &q).unwrap().norm() <= q.norm() * (1.0 + 1e-12));
        prop_assert_eq!(model.eigenvalues.len(), p);
        prop_assert!(model.eigenvalues.windows(2).all(|w| w[0] >= w[1] - 1e-9 * w[0].abs().max(1.0)));
    }
}
