use heightbins::losses::{
    chamfer_bin_loss, chamfer_distance, dc_loss, htc_loss, kl_divergence, kl_loss,
    l1_height_loss, prepare_targets, reference_probabilities, solve_gaussian_sigma,
    solve_laplace_b, solve_uniform_bounds, total_loss, Family, LevelTarget, LossConfig,
    ReferenceDistribution,
};
use heightbins::model::{HeadConfig, HeadVars, HtcHead, Level};
use heightbins::tensor::{Graph, Tensor, TensorError, Var};
use heightbins::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Composite Simpson rule with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn gauss_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

fn laplace_pdf(x: f64, loc: f64, b: f64) -> f64 {
    (-(x - loc).abs() / b).exp() / (2.0 * b)
}

fn c(g: &Graph, shape: &[usize], data: Vec<f64>) -> Var {
    g.constant_from(shape.to_vec(), data).unwrap()
}

#[test]
fn l1_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a: Vec<f64> = (0..36).map(|_| rng.gen_range(0.0..30.0)).collect();
    let b: Vec<f64> = (0..36).map(|_| rng.gen_range(0.0..30.0)).collect();
    let g = Graph::new();
    let (av, bv) = (c(&g, &[1, 6, 6], a.clone()), c(&g, &[1, 6, 6], b.clone()));
    assert_eq!(g.item(l1_height_loss(&g, av, av).unwrap()), 0.0);
    let shifted = c(&g, &[1, 6, 6], a.iter().map(|v| v + 2.0).collect());
    assert!((g.item(l1_height_loss(&g, shifted, av).unwrap()) - 2.0).abs() < 1e-12);
    let mut want = 0.0;
    for i in 0..36 {
        want += (a[i] - b[i]).abs();
    }
    assert!((g.item(l1_height_loss(&g, av, bv).unwrap()) - want / 36.0).abs() < 1e-12);
    let other = c(&g, &[1, 3, 12], a);
    assert!(matches!(
        l1_height_loss(&g, av, other),
        Err(Error::Tensor(TensorError::ShapeMismatch { .. } | TensorError::Contract { .. }))
    ));
}

/// Exhaustive nearest-neighbour search in both directions.
fn chamfer_oracle(edges: &[f64], gt: &[f64]) -> f64 {
    let dir = |from: &[f64], to: &[f64]| {
        from.iter()
            .map(|x| to.iter().map(|y| (x - y).powi(2)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / from.len() as f64
    };
    dir(edges, gt) + dir(gt, edges)
}

#[test]
fn chamfer_examples() {
    assert_eq!(chamfer_distance(&[0.0, 1.0], &[0.5]).unwrap(), 0.5);
    assert_eq!(chamfer_distance(&[1.0, 4.0, 2.0], &[2.0, 1.0, 4.0, 4.0]).unwrap(), 0.0);
    assert!(matches!(
        chamfer_distance(&[0.0, 1.0], &[]),
        Err(Error::Tensor(TensorError::Contract { .. }))
    ));
    let g = Graph::new();
    let e = c(&g, &[2], vec![0.0, 1.0]);
    assert_eq!(g.item(chamfer_bin_loss(&g, e, &[0.5]).unwrap()), 0.5);
    assert!(chamfer_bin_loss(&g, e, &[]).is_err());
}

#[test]
fn chamfer_matches_the_oracle_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let ne = rng.gen_range(1..40);
        let nt = rng.gen_range(1..200);
        let edges: Vec<f64> = (0..ne).map(|_| rng.gen_range(-5.0..60.0)).collect();
        let gt: Vec<f64> = (0..nt).map(|_| rng.gen_range(0.0..50.0)).collect();
        let want = chamfer_oracle(&edges, &gt);
        assert!((chamfer_distance(&edges, &gt).unwrap() - want).abs() <= 1e-12 * want.max(1.0));
        let g = Graph::new();
        let v = g.item(chamfer_bin_loss(&g, c(&g, &[ne], edges), &gt).unwrap());
        assert!((v - want).abs() <= 1e-12 * want.max(1.0));
    }
}

#[test]
fn chamfer_gradient_matches_differences() {
    use heightbins::tensor::fdcheck;
    let gt = [0.3, 2.2, 2.9, 7.5, 8.0, 8.1];
    let inputs = vec![Tensor::new(vec![5], vec![0.0, 1.1, 3.7, 5.05, 9.4]).unwrap()];
    let report = fdcheck::check(&inputs, fdcheck::FD_STEP, None, |g, v| {
        chamfer_bin_loss(g, v[0], &gt).map_err(|e| TensorError::contract("t", e.to_string()))
    })
    .unwrap();
    assert!(fdcheck::worst(&report) < 1e-4);
}

#[test]
fn htc_examples() {
    let g = Graph::new();
    let half = c(&g, &[1, 2, 2], vec![0.5; 4]);
    let v = g.item(htc_loss(&g, half, &[0.0, 5.0, 0.2, 3.0], 1.0, 1e-12).unwrap());
    assert!((v - std::f64::consts::LN_2).abs() < 1e-15);

    let near = c(&g, &[1, 2, 2], vec![1e-9, 1.0 - 1e-9, 1e-9, 1.0 - 1e-9]);
    let v = g.item(htc_loss(&g, near, &[0.0, 5.0, 1.0, 3.0], 1.0, 1e-12).unwrap());
    assert!(v < 1e-8);

    let p = [0.9, 0.2, 0.6, 0.3];
    let gt = [4.0, 0.5, 0.9, 12.0];
    let bce = |p: f64, y: bool| if y { -p.ln() } else { -(1.0 - p).ln() };
    let want = (bce(0.9, true) + bce(0.2, false) + bce(0.6, false) + bce(0.3, true)) / 4.0;
    let v = g.item(htc_loss(&g, c(&g, &[1, 2, 2], p.to_vec()), &gt, 1.0, 1e-12).unwrap());
    assert!((v - want).abs() < 1e-14);
}

#[test]
fn gaussian_sigma_examples() {
    let s = solve_gaussian_sigma(0.6826895, 2.0).unwrap();
    assert!((s - 1.0).abs() < 1e-6, "{s}");
    // inverse of erf by bisection
    let mut lo = 0.0;
    let mut hi = 3.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if heightbins::tensor::special::erf(mid) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let want = 1.0 / (std::f64::consts::SQRT_2 * lo);
    let s = solve_gaussian_sigma(0.5, 2.0).unwrap();
    assert!((s - want).abs() < 1e-9);
    assert!((s - 1.482602).abs() < 1e-6);
    let grid: Vec<f64> = (1..20).map(|i| solve_gaussian_sigma(i as f64 * 0.05, 2.0).unwrap()).collect();
    assert!(grid.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn laplace_examples() {
    let b = solve_laplace_b(1.0 - (-1.0f64).exp(), 2.0).unwrap();
    assert!((b - 1.0).abs() < 1e-6);
    assert!(solve_laplace_b(1e-3, 2.0).unwrap() > solve_laplace_b(1e-2, 2.0).unwrap());
    assert!(solve_laplace_b(1e-12, 2.0).unwrap() > 1e11);
    let grid: Vec<f64> = (1..20).map(|i| solve_laplace_b(i as f64 * 0.05, 1.0).unwrap()).collect();
    assert!(grid.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn uniform_examples() {
    assert_eq!(solve_uniform_bounds(0.5, 2.0, 10.0).unwrap(), (8.0, 12.0));
    let (a, b) = solve_uniform_bounds(1.0, 2.0, 10.0).unwrap();
    assert_eq!(b - a, 2.0);
    for i in 1..20 {
        let p_m = i as f64 * 0.05;
        let (a, b) = solve_uniform_bounds(p_m, 2.0, 10.0).unwrap();
        let overlap = (11.0f64.min(b) - 9.0f64.max(a)).max(0.0);
        assert!((overlap / (b - a) - p_m).abs() < 1e-12);
    }
}

#[test]
fn solvers_reject_bad_inputs() {
    for r in [solve_gaussian_sigma(0.5, 0.0), solve_laplace_b(0.5, -2.0)] {
        assert!(matches!(r, Err(Error::Tensor(TensorError::Contract { .. }))));
    }
    assert!(matches!(
        solve_uniform_bounds(0.5, 0.0, 1.0),
        Err(Error::Tensor(TensorError::Contract { .. }))
    ));
    assert!(solve_gaussian_sigma(1.0, 1.0).is_err());
    assert!(solve_laplace_b(0.0, 1.0).is_err());
}

#[test]
fn solved_scales_recover_the_mode_probability_by_integration() {
    for i in 1..20 {
        let p_m = i as f64 * 0.05;
        for delta in [0.5, 2.0, 10.0] {
            let h = 7.0;
            let (lo, hi) = (h - delta / 2.0, h + delta / 2.0);
            let s = solve_gaussian_sigma(p_m, delta).unwrap();
            let m = simpson(|x| gauss_pdf(x, h, s), lo, hi, 2000);
            assert!((m - p_m).abs() < 1e-9, "gaussian p_m={p_m} delta={delta}: {m}");
            let b = solve_laplace_b(p_m, delta).unwrap();
            // the pdf has a kink at h; integrate the halves separately
            let m = simpson(|x| laplace_pdf(x, h, b), lo, h, 2000)
                + simpson(|x| laplace_pdf(x, h, b), h, hi, 2000);
            assert!((m - p_m).abs() < 1e-9, "laplace p_m={p_m} delta={delta}: {m}");
        }
    }
}

#[test]
fn reference_bin_examples() {
    let tight = ReferenceDistribution::Gaussian { mean: 50.0, sigma: 1e-3 };
    let edges: Vec<f64> = (0..=10).map(|i| i as f64 * 10.0 + 5.0).collect();
    let p = tight.bin_probabilities(&edges);
    assert!((p[4] - 1.0).abs() < 1e-12);

    let u = ReferenceDistribution::Uniform { a: 2.0, b: 8.0 };
    let p = u.bin_probabilities(&[0.0, 2.0, 3.0, 5.0, 8.0, 9.0]);
    let want = [0.0, 1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0, 0.0];
    for (x, y) in p.iter().zip(want) {
        assert!((x - y).abs() < 1e-15);
    }

    let n01 = ReferenceDistribution::Gaussian { mean: 0.0, sigma: 1.0 };
    let p = n01.bin_probabilities(&[-3.0, -1.0, 1.0, 3.0]);
    for (x, y) in p.iter().zip([0.157305, 0.682689, 0.157305]) {
        assert!((x - y).abs() < 1e-5);
    }
    for (k, e) in [(-3.0, -1.0), (-1.0, 1.0), (1.0, 3.0)].iter().enumerate() {
        let oracle = simpson(|x| gauss_pdf(x, 0.0, 1.0), e.0, e.1, 2000);
        assert!((p[k] - oracle).abs() < 1e-10);
    }
}

#[test]
fn delta_reference_is_one_hot_with_lower_ties() {
    let edges = [0.0, 1.0, 2.0, 4.0];
    assert_eq!(ReferenceDistribution::Delta { at: 1.5 }.bin_probabilities(&edges), vec![0.0, 1.0, 0.0]);
    assert_eq!(ReferenceDistribution::Delta { at: 2.0 }.bin_probabilities(&edges), vec![0.0, 1.0, 0.0]);
    assert_eq!(ReferenceDistribution::Delta { at: 0.0 }.bin_probabilities(&edges), vec![1.0, 0.0, 0.0]);
}

#[test]
fn kl_examples() {
    assert_eq!(kl_divergence(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5], 1e-12), 0.0);
    let v = kl_divergence(&[1.0, 0.0], &[0.5, 0.5], 1e-12);
    assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    let g = Graph::new();
    let p = c(&g, &[2, 1, 1], vec![0.5, 0.5]);
    assert!((g.item(kl_loss(&g, p, &[1.0, 0.0], 1e-12).unwrap()) - std::f64::consts::LN_2).abs() < 1e-15);
    let zero = c(&g, &[2, 1, 1], vec![1.0, 0.0]);
    let v = g.item(kl_loss(&g, zero, &[0.5, 0.5], 1e-12).unwrap());
    assert!(v.is_finite());
}

#[test]
fn random_kl_pairs_are_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let n = rng.gen_range(2..40);
        let norm = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let q = norm((0..n).map(|_| rng.gen_range(0.0..1.0)).collect());
        let p = norm((0..n).map(|_| rng.gen_range(1e-6..1.0)).collect());
        assert!(kl_divergence(&q, &p, 1e-12) >= 0.0);
        assert!(kl_divergence(&q, &q, 1e-12).abs() < 1e-14);
    }
}

fn cfg(fg: Family, bg: Family) -> LossConfig {
    LossConfig {
        fg_family: fg,
        bg_family: bg,
        ..Default::default()
    }
}

#[test]
fn reference_uses_family_by_height_and_the_clamped_mode() {
    let edges = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0];
    let n = edges.len() - 1;
    let gt = [0.3, 3.0];
    // pixel 0 predicts nearly nothing in its own bin; the clamp keeps w finite
    let p = [1e-9, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2];
    let r = reference_probabilities(&p, &gt, &edges, 1.0, &cfg(Family::Delta, Family::Uniform)).unwrap();
    let (a, b) = solve_uniform_bounds(1e-3, 0.5, 0.3).unwrap();
    let u = ReferenceDistribution::Uniform { a, b }.bin_probabilities(&edges);
    for i in 0..n {
        assert_eq!(r[i * 2], u[i]);
        assert_eq!(r[i * 2 + 1], if i == 3 { 1.0 } else { 0.0 });
    }
    let r = reference_probabilities(&p, &gt, &edges, 1.0, &cfg(Family::None, Family::None)).unwrap();
    assert!(r.iter().all(|&v| v == 0.0));
}

#[test]
fn centered_truth_gets_the_largest_reference_mass() {
    let edges: Vec<f64> = (0..=8).map(|i| i as f64 * 2.5).collect();
    for family in [Family::Gaussian, Family::Laplace, Family::Uniform] {
        for k in 0..8 {
            let h = 0.5 * (edges[k] + edges[k + 1]);
            let d = ReferenceDistribution::solve(family, h, 0.4, 2.5).unwrap();
            let p = d.bin_probabilities(&edges);
            let sum: f64 = p.iter().sum();
            assert!(sum <= 1.0 + 1e-12);
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!(p.iter().all(|&v| v <= p[k]), "{family:?} {k} {p:?}");
            assert!((p[k] - 0.4).abs() < 1e-9);
        }
    }
}

#[test]
fn dc_loss_is_zero_when_prediction_equals_reference() {
    let edges = [0.0, 2.0, 4.0, 6.0];
    let gt = [3.0];
    let c = cfg(Family::Uniform, Family::Uniform);
    let p0 = [0.25, 0.5, 0.25];
    let r = reference_probabilities(&p0, &gt, &edges, 1.0, &c).unwrap();
    assert!((r[1] - 0.5).abs() < 1e-15);
    let g = Graph::new();
    let pv = g.constant_from(vec![3, 1, 1], r.clone()).unwrap();
    assert!(g.item(dc_loss(&g, pv, &gt, &edges, 1.0, &c).unwrap()).abs() < 1e-15);
}

fn toy_outputs(g: &Graph, htc: bool, seed: u64) -> (HeadConfig, Vec<(Level, HeadVars)>) {
    let cfg = HeadConfig {
        n_bins: 6,
        tokens: 3,
        patch_size: 2,
        embed_dim: 4,
        depth: 1,
        heads: 1,
        mlp_dim: 8,
        h_max: 10.0,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outs = Vec::new();
    for (level, size) in [(Level::F4, 2), (Level::F5, 4)] {
        let (head, params) = HtcHead::standalone(&cfg, htc, 2, size, seed).unwrap();
        let p = g.bind_frozen(&params);
        let f = g.constant(&Tensor::uniform(vec![2, size, size], -1.0, 1.0, &mut rng));
        outs.push((level, head.run(g, &p, f).unwrap()));
    }
    (cfg, outs)
}

fn gt4() -> Vec<f64> {
    vec![0.0, 0.2, 5.0, 6.0, 0.4, 0.1, 7.0, 9.0, 0.0, 0.3, 2.0, 0.5, 3.0, 0.0, 0.7, 4.0]
}

#[test]
fn single_level_without_extras_is_the_l1_term() {
    let g = Graph::new();
    let (head, outs) = toy_outputs(&g, true, 1);
    let outs = vec![outs[1]];
    let loss = LossConfig {
        mu_bins: 0.0,
        mu_htc: 0.0,
        mu_dist: 0.0,
        lambdas: vec![1.0],
        ..Default::default()
    };
    let t = prepare_targets(&g, &outs, &gt4(), 4, &head, &loss).unwrap();
    let terms = total_loss(&g, &outs, &t, &head, &loss).unwrap();
    let gt = g.constant_from(vec![1, 4, 4], gt4()).unwrap();
    let l1 = g.item(l1_height_loss(&g, outs[0].1.height, gt).unwrap());
    assert_eq!(g.item(terms.total), l1);
}

#[test]
fn zero_components_give_zero_total() {
    let g = Graph::new();
    let (head, outs) = toy_outputs(&g, true, 2);
    let loss = LossConfig {
        lambdas: vec![0.0, 0.0],
        ..Default::default()
    };
    let t = prepare_targets(&g, &outs, &gt4(), 4, &head, &loss).unwrap();
    assert_eq!(g.item(total_loss(&g, &outs, &t, &head, &loss).unwrap().total), 0.0);
}

#[test]
fn two_level_total_is_the_hand_weighted_sum() {
    for htc in [true, false] {
        let g = Graph::new();
        let (head, outs) = toy_outputs(&g, htc, 3);
        let loss = LossConfig {
            lambdas: vec![0.5, 1.0],
            mu_bins: 0.01,
            mu_htc: 0.7,
            mu_dist: 0.3,
            ..Default::default()
        };
        let targets: Vec<LevelTarget> = prepare_targets(&g, &outs, &gt4(), 4, &head, &loss).unwrap();
        for (a, b) in targets[0].heights.iter().zip([0.175, 6.75, 0.825, 1.8]) {
            assert!((a - b).abs() < 1e-15);
        }
        let terms = total_loss(&g, &outs, &targets, &head, &loss).unwrap();
        let mut want = 0.0;
        for (((_, out), t), lambda) in outs.iter().zip(&targets).zip([0.5, 1.0]) {
            let pred = g.value(out.height);
            let l_h = pred.iter().zip(&t.heights).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64;
            let l_b = chamfer_distance(&g.value(out.bins.edges), &t.heights).unwrap();
            let mut sum = l_h + 0.01 * l_b;
            if let Some(p_fg) = out.p_fg {
                let p = g.value(p_fg);
                let bce: f64 = p
                    .iter()
                    .zip(&t.heights)
                    .map(|(&p, &h)| if h > 1.0 { -p.ln() } else { -(1.0 - p).ln() })
                    .sum();
                sum += 0.7 * bce / p.len() as f64;
            }
            let hw = t.heights.len();
            let pv = g.value(out.p);
            let r = t.reference.as_ref().unwrap();
            let n = pv.len() / hw;
            let mut kl = 0.0;
            for j in 0..hw {
                let q: Vec<f64> = (0..n).map(|i| r[i * hw + j]).collect();
                let p: Vec<f64> = (0..n).map(|i| pv[i * hw + j]).collect();
                kl += kl_divergence(&q, &p, 1e-12);
            }
            sum += 0.3 * kl / hw as f64;
            want += lambda * sum;
        }
        assert!((g.item(terms.total) - want).abs() < 1e-12, "htc={htc}");
    }
}

#[test]
fn lambda_count_mismatch_is_a_configuration_error() {
    let g = Graph::new();
    let (head, outs) = toy_outputs(&g, true, 4);
    let loss = LossConfig {
        lambdas: vec![1.0],
        ..Default::default()
    };
    let t = prepare_targets(&g, &outs, &gt4(), 4, &head, &loss).unwrap();
    assert!(matches!(total_loss(&g, &outs, &t, &head, &loss), Err(Error::Config(_))));
}

#[test]
fn loss_config_reads_family_names() {
    let c: LossConfig = serde_json::from_str(r#"{"fg_family":"laplace","bg_family":"none"}"#).unwrap();
    assert_eq!((c.fg_family, c.bg_family), (Family::Laplace, Family::None));
    assert!(serde_json::from_str::<LossConfig>(r#"{"fg_family":"cauchy"}"#).is_err());
}

proptest! {
    #[test]
    fn chamfer_is_zero_on_identical_sets_and_symmetric(
        a in prop::collection::vec(-50.0f64..50.0, 1..30),
        b in prop::collection::vec(-50.0f64..50.0, 1..30),
    ) {
        prop_assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        let ab = chamfer_distance(&a, &b).unwrap();
        let ba = chamfer_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
    }

    #[test]
    fn gt_on_an_edge_never_increases_chamfer(
        edges in prop::collection::vec(0.0f64..50.0, 1..20),
        gt in prop::collection::vec(0.0f64..50.0, 1..40),
        pick in 0usize..20,
    ) {
        let before = chamfer_distance(&edges, &gt).unwrap();
        let mut more = gt.clone();
        more.push(edges[pick % edges.len()]);
        prop_assert!(chamfer_distance(&edges, &more).unwrap() <= before + 1e-12);
    }

    #[test]
    fn reference_masses_are_bounded(
        family_index in 0usize..4,
        h in 0.0f64..20.0,
        p_m in 0.001f64..0.999,
        widths in prop::collection::vec(0.05f64..3.0, 2..16),
    ) {
        let family = Family::ALL[family_index];
        let mut edges = vec![0.0];
        for w in &widths {
            let last = *edges.last().unwrap();
            edges.push(last + w);
        }
        let k = heightbins::model::head::containing_bin(&edges, h);
        let d = ReferenceDistribution::solve(family, h, p_m, edges[k + 1] - edges[k]).unwrap();
        let p = d.bin_probabilities(&edges);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!(p.iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn cdfs_are_monotone(
        family_index in 0usize..4,
        p_m in 0.01f64..0.99,
        xs in prop::collection::vec(-20.0f64..20.0, 2..50),
    ) {
        let d = ReferenceDistribution::solve(Family::ALL[family_index], 0.0, p_m, 1.5).unwrap();
        let mut xs = xs;
        xs.sort_by(f64::total_cmp);
        for w in xs.windows(2) {
            prop_assert!(d.cdf(w[1]) >= d.cdf(w[0]));
        }
    }
}
