//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured statistic (run with `--nocapture` to see them).

use std::sync::Arc;
use std::time::Instant;

use imkit::association::AuxiliaryDistribution;
use imkit::catalog::{
    brownian_conditioning, brownian_eigensystem, brownian_marginal_field,
    brownian_marginal_fractions, brownian_q_association, brownian_v_field,
    classify_corpus, gaussian_mean_model, sigma_tridiagonal,
};
use imkit::characteristics::{
    picard_solve, trace_invariants_unchecked, verify_local_conditioning, CharacteristicField,
    PicardConfig,
};
use imkit::engine::{
    belief_plausibility_mc, plausibility_curve, plausibility_curve_mc, plausibility_singleton,
    validity_diagnostic, Assertion, FocalGrid,
};
use imkit::prs::PredictiveRandomSet;
use imkit::regular::{
    degeneracy_rank_test, n_sample_separability, separability_test, two_parameter_test,
    DetectorGrid,
};
use imkit::stats::{norm_cdf, norm_inv_cdf, stream_rng};
use nalgebra::DMatrix;
use rand::Rng;

fn std_prs(dim: usize) -> PredictiveRandomSet {
    PredictiveRandomSet::symmetric(AuxiliaryDistribution::standard_normal(dim), &vec![0.0; dim])
        .unwrap()
}

#[test]
fn criterion_1_closed_form_plausibility() {
    let assoc = gaussian_mean_model(1, 1.0).unwrap();
    let prs = std_prs(1);
    let x = [0.4];
    let axis: Vec<f64> = (0..601).map(|i| x[0] - 3.0 + i as f64 * 0.01).collect();

    let curve = plausibility_curve(&assoc, &prs, &x, vec![axis.clone()]).unwrap();
    let sup_exact = curve.axes[0]
        .iter()
        .zip(&curve.pl)
        .map(|(mu, pl)| (pl - 2.0 * norm_cdf(-(x[0] - mu).abs())).abs())
        .fold(0.0, f64::max);
    assert!(sup_exact <= 1e-12, "closed-form sup {sup_exact}");

    let t0 = Instant::now();
    let mc = plausibility_curve_mc(&assoc, &prs, &x, vec![axis], 100_000, 2024).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let sup_mc = curve
        .pl
        .iter()
        .zip(&mc.pl)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(sup_mc <= 0.01, "mc sup {sup_mc}");
    assert!(dt < 5.0, "mc path took {dt:.2}s");
    println!(
        "criterion 1: PASS — closed-form sup {sup_exact:.2e} (<= 1e-12), mc sup {sup_mc:.4} (<= 0.01) in {dt:.2}s"
    );
}

#[test]
fn criterion_2_interval_equivalence() {
    // the region at alpha = 0.05 is the central 95% interval; quoting 0.025
    // as the threshold is a convention slip (0.025 is the one-sided tail)
    let assoc = gaussian_mean_model(1, 1.0).unwrap();
    let prs = std_prs(1);
    let x = [-0.7];
    let axis: Vec<f64> = (0..601).map(|i| x[0] - 3.0 + i as f64 * 0.01).collect();
    let curve = plausibility_curve(&assoc, &prs, &x, vec![axis]).unwrap();
    let region = curve.region(0.05).unwrap();
    assert_eq!(region.len(), 1);
    let lo_expect = x[0] + norm_inv_cdf(0.025);
    let hi_expect = x[0] + norm_inv_cdf(0.975);
    let (lo, hi) = region[0];
    assert!((lo - lo_expect).abs() <= 0.01, "lo {lo} vs {lo_expect}");
    assert!((hi - hi_expect).abs() <= 0.01, "hi {hi} vs {hi_expect}");
    println!(
        "criterion 2: PASS — region [{lo:.4}, {hi:.4}] matches [{lo_expect:.4}, {hi_expect:.4}] within one cell"
    );
}

#[test]
fn criterion_3_validity_calibration() {
    let t0 = Instant::now();
    let assoc = gaussian_mean_model(1, 1.0).unwrap();
    let prs = std_prs(1);
    let good = validity_diagnostic(&assoc, &prs, &[0.3], 10_000, 99).unwrap();
    assert!(good.pass && good.ks_one_sided <= 0.02, "good ks {}", good.ks_one_sided);

    let broken = prs.clone().with_radius_scale(0.5);
    let bad = validity_diagnostic(&assoc, &broken, &[0.3], 10_000, 99).unwrap();
    assert!(!bad.pass && bad.ks_one_sided > 0.1, "bad ks {}", bad.ks_one_sided);
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 30.0, "took {dt:.1}s");
    println!(
        "criterion 3: PASS — calibrated ks {:.4} (<= 0.02), half-radius ks {:.3} (> 0.1) in {dt:.2}s",
        good.ks_one_sided, bad.ks_one_sided
    );
}

#[test]
fn criterion_4_picard_exactness() {
    // constant two-axis field of the log-scale variance-components model
    let n = 6;
    let theta0 = [0.2, 0.8];
    let (lambdas, _) = brownian_eigensystem(n).unwrap();
    let field = brownian_v_field(n, &theta0).unwrap();
    let cfg = PicardConfig::new(vec![1.0, 1.0], 6.0).unwrap().with_tol(1e-12);
    let traj = picard_solve(&field, &vec![0.0; n], &[0.0, 0.0], &cfg).unwrap();
    assert_eq!(traj.iterations_used, 1, "constant field must converge in one iteration");
    let mut sup: f64 = 0.0;
    for (t1, t2) in [(0.9, -0.6), (-1.0, 1.0), (0.33, 0.77)] {
        let v = traj.evaluate(&[t1, t2]);
        for i in 0..n {
            sup = sup.max((v[i] - (t1 + t2 / (lambdas[i] + theta0[1]))).abs());
        }
    }
    assert!(sup <= 1e-12, "constant-field sup {sup}");

    // du/dtau = u against the exponential
    let expf = CharacteristicField::from_fn(
        1,
        1,
        vec![0.0],
        Arc::new(|_t, u| DMatrix::from_element(1, 1, u[0])),
    );
    let cfg = PicardConfig::new(vec![0.5], 1.5).unwrap().with_tol(1e-11);
    let traj = picard_solve(&expf, &[1.0], &[0.0], &cfg).unwrap();
    let mut sup_exp: f64 = 0.0;
    for i in 0..=40 {
        let t = -0.5 + i as f64 * 0.025;
        sup_exp = sup_exp.max((traj.evaluate(&[t])[0] - t.exp()).abs());
    }
    assert!(sup_exp <= 1e-8, "exponential sup {sup_exp}");
    println!(
        "criterion 4: PASS — constant field exact to {sup:.2e} in 1 iteration, exp field to {sup_exp:.2e}"
    );
}

#[test]
fn criterion_5_conditioning_certificates_and_traced_invariants() {
    // finite-difference certificates across sizes and anchors
    let mut worst_cert: f64 = 0.0;
    for &n in &[5usize, 10, 20] {
        let assoc = brownian_q_association(n).unwrap();
        let mut rng = stream_rng(777, n as u64);
        for _ in 0..20 {
            let theta0 = [rng.gen_range(-1.0..1.0), rng.gen_range(0.2..2.0)];
            let u0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..4.0)).collect();
            let q = assoc.forward(&u0, &theta0).unwrap();
            let cond = brownian_conditioning(&q, &theta0).unwrap();
            for pos in 0..cond.coeffs.len() {
                let c = cond.clone();
                let eta = move |u: &[f64]| c.h(pos, u);
                let w = verify_local_conditioning(&eta, &assoc, &theta0, 8, 1e-6, 5).unwrap();
                worst_cert = worst_cert.max(w);
            }
        }
    }
    assert!(worst_cert <= 1e-6, "certificate {worst_cert}");

    // numerically traced invariants against the closed form
    let n = 6;
    let theta0 = [0.1, 0.8];
    let field = brownian_v_field(n, &theta0).unwrap();
    let (_m, _l, a) =
        imkit::characteristics::certify_rectangle(&field, &vec![0.0; n], &[0.0, 0.0], 8.0)
            .unwrap();
    let cfg = PicardConfig::new(vec![a, a], 8.0).unwrap().with_degree(3).with_tol(1e-11);
    let mut rng = stream_rng(31, 0);
    let mut traced_all = Vec::new();
    let mut closed_all = Vec::new();
    for _ in 0..100 {
        let v: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal);
                (z * z).ln()
            })
            .collect();
        let traced = trace_invariants_unchecked(&field, &v, &[0.0, 0.0], &cfg).unwrap();
        let closed = imkit::catalog::brownian_closed_form_invariants(n, &theta0, &v).unwrap();
        traced_all.push(traced);
        closed_all.push(closed);
    }
    // per-component affine fit of traced against closed form
    let mut worst_resid: f64 = 0.0;
    let mut min_rank_corr: f64 = 1.0;
    for comp in 0..(n - 2) {
        let xs: Vec<f64> = closed_all.iter().map(|v| v[comp]).collect();
        let ys: Vec<f64> = traced_all.iter().map(|v| v[comp]).collect();
        let m = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / m;
        let my = ys.iter().sum::<f64>() / m;
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = sxy / sxx;
        let scale = ys.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1.0);
        for (x, y) in xs.iter().zip(&ys) {
            worst_resid = worst_resid.max((y - (my + slope * (x - mx))).abs() / scale);
        }
        // rank correlation: order agreement
        let mut order_x: Vec<usize> = (0..xs.len()).collect();
        order_x.sort_by(|i, j| xs[*i].partial_cmp(&xs[*j]).unwrap());
        let mut order_y: Vec<usize> = (0..ys.len()).collect();
        order_y.sort_by(|i, j| ys[*i].partial_cmp(&ys[*j]).unwrap());
        if order_x == order_y {
            min_rank_corr = min_rank_corr.min(1.0);
        } else {
            min_rank_corr = 0.0;
        }
    }
    assert!(worst_resid <= 1e-6, "affine residual {worst_resid}");
    assert!(min_rank_corr == 1.0, "rank correlation broke");
    println!(
        "criterion 5: PASS — certificates <= {worst_cert:.2e}, traced-invariant affine residual {worst_resid:.2e}, rank correlation 1.0"
    );
}

#[test]
fn criterion_6_eigensystem_against_dense_solver() {
    let mut worst_val: f64 = 0.0;
    let mut worst_angle: f64 = 0.0;
    for &n in &[3usize, 8, 32] {
        let (lam, v) = brownian_eigensystem(n).unwrap();
        let dense = sigma_tridiagonal(n);
        let eig = nalgebra::SymmetricEigen::new(dense);
        // sort dense pairs ascending
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|a, b| eig.eigenvalues[*a].partial_cmp(&eig.eigenvalues[*b]).unwrap());
        for (k, &i) in idx.iter().enumerate() {
            worst_val = worst_val.max((lam[k] - eig.eigenvalues[i]).abs());
            // angle via the orthogonal component; acos(dot) cannot resolve
            // angles below sqrt(machine epsilon)
            let dot: f64 = (0..n).map(|j| v[(j, k)] * eig.eigenvectors[(j, i)]).sum();
            let orth: f64 = (0..n)
                .map(|j| {
                    let r = v[(j, k)] - dot * eig.eigenvectors[(j, i)];
                    r * r
                })
                .sum::<f64>()
                .sqrt();
            worst_angle = worst_angle.max(orth.min(1.0).asin());
        }
    }
    assert!(worst_val <= 1e-10, "eigenvalue error {worst_val}");
    assert!(worst_angle <= 1e-8, "subspace angle {worst_angle}");
    println!(
        "criterion 6: PASS — eigenvalue error {worst_val:.2e} (<= 1e-10), subspace angle {worst_angle:.2e} (<= 1e-8)"
    );
}

#[test]
fn criterion_7_classification_corpus() {
    let t0 = Instant::now();
    let sym = DetectorGrid::new(vec![(-1.0, 1.0)], vec![(-1.0, 1.0)]);
    let pos = DetectorGrid::new(vec![(0.5, 2.5)], vec![(1.0, 3.0)]);

    let r1 = separability_test(&classify_corpus::location_model(2), &sym).unwrap();
    assert!(r1.regular, "location: {r1:?}");

    let r2 = separability_test(&classify_corpus::scale_model(2), &pos).unwrap();
    assert!(r2.regular, "scale: {r2:?}");
    let tr = imkit::regular::extract_location_transform(
        &classify_corpus::scale_model(2),
        &r2,
        &pos,
    )
    .unwrap();
    assert_eq!(tr.flavor(), imkit::regular::TransformFlavor::LocationAfterLog);

    let r3 = separability_test(&classify_corpus::nonseparable_model(), &pos).unwrap();
    assert!(!r3.regular, "nonseparable: {r3:?}");

    let grid2 = DetectorGrid::new(
        vec![(-1.0, 1.0), (-0.7, 1.3), (0.2, 2.2)],
        vec![(-1.0, 1.0), (0.5, 2.0)],
    );
    let r4 = two_parameter_test(&classify_corpus::affine_two_parameter_model(), &grid2).unwrap();
    assert!(r4.regular, "affine-2p: {r4:?}");

    let thetas = vec![vec![0.3, 0.7, 1.1], vec![-0.4, 1.0, 0.2], vec![0.9, -0.2, 0.5]];
    let upts = [0.1, 0.5, 1.2, 2.0, 3.1];
    let r5 =
        degeneracy_rank_test(&classify_corpus::duplicated_three_parameter_model(), &thetas, &upts)
            .unwrap();
    assert!(r5.degenerate && r5.numerical_rank == 2, "duplicated: {r5:?}");

    let r6 =
        degeneracy_rank_test(&classify_corpus::vandermonde_three_parameter_model(), &thetas, &upts)
            .unwrap();
    assert!(!r6.degenerate && r6.numerical_rank == 3, "vandermonde: {r6:?}");

    // n-sample variant also agrees on the corpus
    let r7 = n_sample_separability(&classify_corpus::location_model(5), &sym).unwrap();
    assert!(r7.regular);

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 10.0, "corpus took {dt:.1}s");
    println!("criterion 7: PASS — all six corpus verdicts correct in {dt:.2}s");
}

#[test]
fn criterion_8_engine_properties() {
    let assoc = gaussian_mean_model(1, 1.0).unwrap();
    let prs = std_prs(1);
    let x = [0.15];
    let grid = FocalGrid::new(vec![(-6.0, 6.0)]);
    let seed = 4242;

    // bel <= pl and complement bounds with shared draws
    let a = Assertion::Box {
        lower: vec![-0.4],
        upper: vec![0.9],
    };
    let ac = Assertion::Predicate(Arc::new(|t: &[f64]| !(-0.4..=0.9).contains(&t[0])));
    let bp_a = belief_plausibility_mc(&assoc, &prs, &x, &a, &grid, 50_000, seed).unwrap();
    let bp_c = belief_plausibility_mc(&assoc, &prs, &x, &ac, &grid, 50_000, seed).unwrap();
    assert!(bp_a.bel <= bp_a.pl && bp_c.bel <= bp_c.pl);
    assert!(bp_a.bel + bp_c.bel <= 1.0 + 3.0 * (bp_a.mc_se_bel + bp_c.mc_se_bel) + 1e-12);
    assert!(bp_a.pl + bp_c.pl >= 1.0 - 3.0 * (bp_a.mc_se_pl + bp_c.mc_se_pl) - 1e-12);

    // monotone under inclusion with common random numbers
    let mut prev = 0.0;
    for w in [0.25, 0.5, 1.0, 2.0, 4.0] {
        let nested = Assertion::Box {
            lower: vec![0.8 - w],
            upper: vec![0.8 + w],
        };
        let bp = belief_plausibility_mc(&assoc, &prs, &x, &nested, &grid, 20_000, seed).unwrap();
        assert!(bp.pl >= prev - 1e-15, "monotonicity broke: {} < {prev}", bp.pl);
        prev = bp.pl;
    }

    // singleton specialization agrees with the exact path at 1e5 draws
    let mu0 = [1.1];
    let exact = plausibility_singleton(&assoc, &prs, &x, &mu0).unwrap();
    let bp_s = belief_plausibility_mc(
        &assoc,
        &prs,
        &x,
        &Assertion::Singleton(mu0.to_vec()),
        &grid,
        100_000,
        seed,
    )
    .unwrap();
    assert!(
        (bp_s.pl - exact).abs() <= 3.0 * bp_s.mc_se_pl.max(1e-4),
        "singleton {} vs exact {exact}",
        bp_s.pl
    );
    assert_eq!(bp_s.bel, 0.0);

    // bit-for-bit thread invariance
    let mut runs = Vec::new();
    for threads in [1usize, 2, 5] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let bp = pool.install(|| {
            belief_plausibility_mc(&assoc, &prs, &x, &a, &grid, 30_000, seed).unwrap()
        });
        let rep = pool.install(|| validity_diagnostic(&assoc, &prs, &[0.3], 2000, 7).unwrap());
        runs.push((bp.bel.to_bits(), bp.pl.to_bits(), rep.ks_one_sided.to_bits()));
    }
    assert!(runs.windows(2).all(|w| w[0] == w[1]), "thread-count variance: {runs:?}");

    println!(
        "criterion 8: PASS — bel<=pl, complement bounds, CRN monotonicity, singleton match {:.4}~{exact:.4}, thread-invariant",
        bp_s.pl
    );
}

#[test]
fn criterion_9_marginal_field_against_finite_differences() {
    let n = 6;
    let mut rng = stream_rng(909, 0);
    let mut worst_rel: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for _ in 0..100 {
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..5.0)).collect();
        let phi: f64 = rng.gen_range(0.15..3.0);
        let b = brownian_marginal_fractions(&q, phi).unwrap();
        worst_sum = worst_sum.max((b.iter().sum::<f64>() - 1.0).abs());
        let field = brownian_marginal_field(&q, phi).unwrap();
        let h = 1e-6 * phi.max(1.0);
        let bp = brownian_marginal_fractions(&q, phi + h).unwrap();
        let bm = brownian_marginal_fractions(&q, phi - h).unwrap();
        let scale = field.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-12);
        for i in 0..n - 1 {
            let fd = (bp[i] - bm[i]) / (2.0 * h);
            worst_rel = worst_rel.max((field[i] - fd).abs() / scale);
        }
    }
    assert!(worst_rel <= 1e-5, "field-vs-fd {worst_rel}");
    assert!(worst_sum <= 1e-12, "fraction sum deviation {worst_sum}");
    println!(
        "criterion 9: PASS — field vs fd relative {worst_rel:.2e} (<= 1e-5), fraction-sum deviation {worst_sum:.2e}"
    );
}
