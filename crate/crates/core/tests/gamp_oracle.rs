use grampa::denoisers::*;
use grampa::gamp::*;
use grampa::grampa::{solve, AnalysisProblem, AnalysisReg, AwgnLoss, PixelReg};
use grampa::linops::*;
use grampa::oracle::*;
use grampa::problems::*;
use proptest::prelude::*;

fn rows_of(op: &DenseOperator) -> Vec<Vec<f64>> {
    (0..op.rows()).map(|i| op.row(i).to_vec()).collect()
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (1.0 + y.abs()))
        .fold(0.0, f64::max)
}

fn state_gap(a: &GampState, b: &GampState) -> f64 {
    [
        max_gap(&a.x_hat, &b.x_hat),
        max_gap(&a.nu_x, &b.nu_x),
        max_gap(&a.x_tilde, &b.x_tilde),
        max_gap(&a.s_hat, &b.s_hat),
        max_gap(&a.nu_s, &b.nu_s),
        max_gap(&a.p_hat, &b.p_hat),
        max_gap(&a.nu_p, &b.nu_p),
        max_gap(&a.z_hat, &b.z_hat),
        max_gap(&a.nu_z, &b.nu_z),
        max_gap(&a.r_hat, &b.r_hat),
        max_gap(&a.nu_r, &b.nu_r),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn small_problem(seed: u64) -> (DenseOperator, Vec<DenoiserBlock>, Vec<DenoiserBlock>) {
    let a = gen_gaussian_matrix(6, 4, seed).unwrap();
    let y: Vec<f64> = (0..6).map(|i| ((i as f64) * 1.7 + seed as f64).sin()).collect();
    let output = vec![DenoiserBlock::new(6, AwgnOutput { y, noise_var: 0.05 })];
    let input = vec![
        DenoiserBlock::new(2, BernoulliGaussian(BernoulliGaussianParams::new(0.3, 1.0).unwrap())),
        DenoiserBlock::new(2, GaussianPrior { mean: 0.1, var: 0.7 }),
    ];
    (a, output, input)
}

fn compare_with_transcription(seed: u64, beta0: f64) -> f64 {
    let (a, output, input) = small_problem(seed);
    let config = GampConfig {
        beta0,
        t_max: 10,
        eps: 0.0,
        ..Default::default()
    };
    let init_x = vec![0.0; 4];
    let init_nu = vec![1.0; 4];
    let gamp = Gamp::new(&a, &output, &input, config.clone(), 1.0).unwrap();
    let reference = dense_gamp_reference(&rows_of(&a), &output, &input, &init_x, &init_nu, &config, 10).unwrap();
    let mut state = gamp.initial_state(&init_x, &init_nu).unwrap();
    let mut worst: f64 = 0.0;
    for expected in &reference {
        state = gamp.step(&state);
        assert_eq!(state.t, expected.t);
        worst = worst.max(state_gap(&state, expected));
    }
    worst
}

#[test]
fn matches_dense_transcription_undamped() {
    for seed in 0..5 {
        let gap = compare_with_transcription(seed, 1.0);
        assert!(gap <= 1e-12, "seed {seed}: {gap}");
    }
}

#[test]
fn matches_dense_transcription_damped() {
    for seed in 0..5 {
        let gap = compare_with_transcription(seed, 0.5);
        assert!(gap <= 1e-12, "seed {seed}: {gap}");
    }
}

#[test]
fn first_iteration_of_transcription_uses_plain_product() {
    let (a, output, input) = small_problem(3);
    let x0 = vec![0.5, -1.0, 0.25, 2.0];
    let trace = dense_gamp_reference(&rows_of(&a), &output, &input, &x0, &[1.0; 4], &GampConfig::default(), 1).unwrap();
    let ax = a.forward(&x0).unwrap();
    assert!(max_gap(&trace[0].p_hat, &ax) < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn damping_is_a_convex_combination(seed in 0u64..500, beta0 in 0.05f64..1.0, steps in 1usize..6) {
        let (a, output, input) = small_problem(seed);
        let config = GampConfig { beta0, ..Default::default() };
        let gamp = Gamp::new(&a, &output, &input, config, 1.0).unwrap();
        let (lo, hi) = gamp.variance_bounds();
        let clamp = |v: f64| v.clamp(lo, hi);
        let mut state = gamp.initial_state(&[0.0; 4], &[1.0; 4]).unwrap();
        for _ in 0..steps {
            let (next, cand) = gamp.step_detailed(&state);
            let b = cand.beta;
            prop_assert_eq!(b, if state.t == 1 { 1.0 } else { beta0 });
            for i in 0..6 {
                prop_assert_eq!(next.nu_p[i], clamp(b * cand.nu_p[i] + (1.0 - b) * state.nu_p[i]));
                prop_assert_eq!(next.nu_s[i], clamp(b * cand.nu_s[i] + (1.0 - b) * state.nu_s[i]));
                prop_assert_eq!(next.s_hat[i], b * cand.s_hat[i] + (1.0 - b) * state.s_hat[i]);
            }
            for n in 0..4 {
                prop_assert_eq!(next.x_tilde[n], b * cand.x_tilde[n] + (1.0 - b) * state.x_tilde[n]);
                prop_assert_eq!(next.nu_r[n], clamp(b * cand.nu_r[n] + (1.0 - b) * state.nu_r[n]));
                prop_assert!(next.nu_x[n] > 0.0);
            }
            state = next;
        }
    }
}

fn lasso_instance() -> (DenseOperator, Vec<f64>, f64, f64) {
    let a = gen_gaussian_matrix(8, 16, 11).unwrap();
    let mut x = vec![0.0; 16];
    x[2] = 1.0;
    x[9] = -0.7;
    let z = a.forward(&x).unwrap();
    let y = add_awgn(&z, 30.0, 11).unwrap();
    (a, y, 0.5, 0.1)
}

#[test]
fn map_lasso_matches_proximal_gradient() {
    let (a, y, lambda, noise_var) = lasso_instance();
    let output = vec![DenoiserBlock::new(
        8,
        AwgnOutput {
            y: y.clone(),
            noise_var,
        },
    )];
    let input = vec![DenoiserBlock::new(16, SoftThreshold { lambda })];
    let config = GampConfig {
        beta0: 0.7,
        t_max: 20_000,
        eps: 1e-13,
        mode: Mode::Map,
        ..Default::default()
    };
    let result = gamp_run(&a, &output, &input, &[0.0; 16], &[1.0; 16], &config).unwrap();
    assert!(result.converged);
    let identity = DenseOperator::identity(16).unwrap();
    let reference = prox_gradient_l1(&a, &identity, &y, lambda, noise_var, ORACLE_TOL).unwrap();
    let err: f64 = result
        .x_hat
        .iter()
        .zip(&reference.x_star)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = reference.x_star.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(err <= 1e-4 * norm, "relative error {}", err / norm);

    let cost = map_cost(&a, &output, &input, &result.x_hat).unwrap();
    assert!((cost - reference.objective).abs() <= 1e-6 * reference.objective);

    // local minimality probe
    let mut rng_state = 12345u64;
    let scale = 1e-3 * norm;
    for _ in 0..100 {
        let delta: Vec<f64> = (0..16)
            .map(|_| {
                rng_state = rng_state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((rng_state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect();
        let dn = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        let probe: Vec<f64> = result
            .x_hat
            .iter()
            .zip(&delta)
            .map(|(x, d)| x + d * scale / dn)
            .collect();
        assert!(map_cost(&a, &output, &input, &probe).unwrap() >= cost * (1.0 - 1e-12));
    }
}

#[test]
fn map_fixed_point_is_critical_for_smooth_penalties() {
    let a = gen_gaussian_matrix(10, 6, 4).unwrap();
    let y: Vec<f64> = (0..10).map(|i| (i as f64 * 0.9).cos()).collect();
    let noise_var = 0.2;
    let prior = GaussianPrior { mean: 0.3, var: 0.5 };
    let output = vec![DenoiserBlock::new(
        10,
        AwgnOutput {
            y: y.clone(),
            noise_var,
        },
    )];
    let input = vec![DenoiserBlock::new(6, prior)];
    let config = GampConfig {
        eps: 1e-14,
        t_max: 5000,
        mode: Mode::Map,
        ..Default::default()
    };
    let r = gamp_run(&a, &output, &input, &[0.0; 6], &[1.0; 6], &config).unwrap();
    // ∇ = Aᵀ(Ax - y)/σ² + (x - μ)/v
    let ax = a.forward(&r.x_hat).unwrap();
    let resid: Vec<f64> = ax.iter().zip(&y).map(|(p, q)| (p - q) / noise_var).collect();
    let back = a.adjoint(&resid).unwrap();
    let grad: Vec<f64> = back
        .iter()
        .zip(&r.x_hat)
        .map(|(b, x)| b + (x - prior.mean) / prior.var)
        .collect();
    let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let cost = map_cost(&a, &output, &input, &r.x_hat).unwrap();
    assert!(gnorm <= 1e-6 * (1.0 + cost), "gradient {gnorm}");
}

#[test]
fn map_l1_analysis_matches_convex_solver() {
    let phi = gaussian_operator(8, 16, 21).unwrap();
    let omega = make_fd1d(16).unwrap();
    let x: Vec<f64> = (0..16)
        .map(|i| {
            if i < 6 {
                1.0
            } else if i < 11 {
                -0.5
            } else {
                0.2
            }
        })
        .collect();
    let z = phi.forward(&x).unwrap();
    let y = add_awgn(&z, 40.0, 21).unwrap();
    let noise_var = awgn_noise_var(&z, 40.0);
    let lambda = (2.0 * 15f64.ln()).sqrt() / noise_var.sqrt();
    let problem = AnalysisProblem {
        phi: phi.clone(),
        omega: omega.clone(),
        loss: AwgnLoss {
            y: y.clone(),
            noise_var,
        },
        analysis_reg: AnalysisReg::L1 { lambda },
        pixel_reg: PixelReg::None,
        mode: Mode::Map,
    };
    let config = GampConfig {
        beta0: 0.5,
        t_max: 20_000,
        eps: 1e-13,
        ..Default::default()
    };
    let r = solve(&problem, &config).unwrap();
    let reference = prox_gradient_l1(phi.as_ref(), omega.as_ref(), &y, lambda, noise_var, ORACLE_TOL).unwrap();
    let obj = l1_analysis_objective(phi.as_ref(), omega.as_ref(), &y, lambda, noise_var, &r.x_hat).unwrap();
    assert!(
        (obj - reference.objective).abs() <= 1e-6 * reference.objective,
        "{obj} vs {}",
        reference.objective
    );
    let res =
        l1_analysis_subgradient_residual(phi.as_ref(), omega.as_ref(), &y, lambda, noise_var, &r.x_hat, 1e-6).unwrap();
    assert!(res <= 1e-5, "residual {res}");
}

#[test]
fn oracle_objective_is_monotone_for_identity_omega() {
    let (a, y, lambda, noise_var) = lasso_instance();
    let identity = DenseOperator::identity(16).unwrap();
    let sol = prox_gradient_l1(&a, &identity, &y, lambda, noise_var, ORACLE_TOL).unwrap();
    assert!(sol.kkt_residual <= ORACLE_TOL);
    let zero = l1_analysis_objective(&a, &identity, &y, lambda, noise_var, &[0.0; 16]).unwrap();
    assert!(sol.objective <= zero);
    assert!(sol.objective_history.len() > 1);
    for w in sol.objective_history.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-14), "{} then {}", w[0], w[1]);
    }
}

#[test]
fn synthesis_recovery_with_identity_analysis() {
    let n = 100;
    let phi = gaussian_operator(50, n, 8).unwrap();
    let omega = DenseOperator::identity(n).unwrap().into_operator();
    let mut x = vec![0.0; n];
    for (k, &i) in [3usize, 17, 42, 66, 91].iter().enumerate() {
        x[i] = if k % 2 == 0 { 1.0 + k as f64 * 0.3 } else { -1.2 };
    }
    let y = phi.forward(&x).unwrap();
    let noise_var = 1e-12 * y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    let problem = AnalysisProblem {
        phi,
        omega,
        loss: AwgnLoss { y, noise_var },
        analysis_reg: AnalysisReg::Snipe { omega: 2.0 },
        pixel_reg: PixelReg::None,
        mode: Mode::Mmse,
    };
    let config = GampConfig {
        beta0: 0.5,
        t_max: 2000,
        eps: 1e-10,
        ..Default::default()
    };
    let r = solve(&problem, &config).unwrap();
    let support: Vec<usize> = (0..n).filter(|&i| r.x_hat[i].abs() > 1e-3).collect();
    assert_eq!(support, vec![3, 17, 42, 66, 91]);
    assert!(nsnr(&x, &r.x_hat).unwrap() > 1e6);
}

#[test]
fn row_permutation_leaves_estimate_unchanged() {
    let phi = gen_gaussian_matrix(30, 40, 5).unwrap();
    let omega = make_fd1d(40).unwrap();
    let x = gen_bg_fd_signal(40, 0.1, 5).unwrap();
    let y = phi.forward(&x).unwrap();
    let perm: Vec<usize> = (0..30).map(|i| (i * 7) % 30).collect();
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| phi.row(i).to_vec()).collect();
    let y_perm: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
    let phi_perm = DenseOperator::from_rows(&rows).unwrap().into_operator();
    let config = GampConfig {
        beta0: 0.5,
        t_max: 300,
        ..Default::default()
    };
    let run = |phi: Operator, y: Vec<f64>| {
        let p = AnalysisProblem {
            phi,
            omega: omega.clone(),
            loss: AwgnLoss { y, noise_var: 1e-6 },
            analysis_reg: AnalysisReg::Snipe { omega: 3.0 },
            pixel_reg: PixelReg::None,
            mode: Mode::Mmse,
        };
        solve(&p, &config).unwrap().x_hat
    };
    let a = run(phi.into_operator(), y);
    let b = run(phi_perm, y_perm);
    assert!(max_gap(&a, &b) <= 1e-10, "{}", max_gap(&a, &b));
}
