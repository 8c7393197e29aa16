//! Release gate: one test per acceptance criterion, each printing a
//! one-line verdict with the measured quantities. Oracles (Frobenius
//! norms, brute-force intervening opportunities, finite differences)
//! are recomputed here independently of the library code under test.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use mobinet_core::baselines::{
    fit_gravity, gravity_generate, gravity_probabilities, radiation_generate, Deterrence,
    GenerationMode, GravityParams,
};
use mobinet_core::harness::{
    build_mixed_set, run_protocol, MetricContext, MetricName,
};
use mobinet_core::ingest::{split_networks, MarginalProfile};
use mobinet_core::metrics::{
    cpc, cut_distance, histogram_in_range, js_divergence, rmse, CutMode, JS_BINS,
};
use mobinet_core::mogan::{train, GanConfig, IMAGE_SIDE};
use mobinet_core::net::{
    build_grid_tessellation, distance_matrix, BBox, DistanceMatrix, MobilityNetwork,
};
use mobinet_core::nn::{
    bce_backward, bce_loss, leaky_relu, leaky_relu_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, BatchNorm2d, BatchNormMode, Conv2d, ConvTranspose2d, Tensor4,
};

fn random_net(n: usize, rng: &mut ChaCha8Rng) -> MobilityNetwork {
    let w = Array2::from_shape_simple_fn((n, n), || rng.random_range(0.0..40.0f64));
    MobilityNetwork::new("a", w).unwrap()
}

fn random_integer_net(n: usize, rng: &mut ChaCha8Rng) -> MobilityNetwork {
    let w = Array2::from_shape_simple_fn((n, n), || rng.random_range(0..=20u32) as f64);
    MobilityNetwork::new("a", w).unwrap()
}

fn grid_distances(rows: usize, cols: usize) -> DistanceMatrix {
    let tess = build_grid_tessellation(BBox::new(0.0, 0.0, 0.8, 0.8), rows, cols).unwrap();
    distance_matrix(&tess)
}

#[test]
fn criterion_01_rmse_equals_scaled_frobenius_norm() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a = random_net(64, &mut rng);
        let b = random_net(64, &mut rng);
        let frobenius: f64 = a
            .weights
            .iter()
            .zip(b.weights.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let diff = (rmse(&a, &b).unwrap() - frobenius / 64.0).abs();
        worst = worst.max(diff);
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(worst < 1e-12, "worst deviation {worst:.3e}");
    assert!(elapsed < 1.0, "took {elapsed:.2}s, budget 1s");
    println!("criterion 1 PASS: max |rmse - frobenius/64| = {worst:.3e} over 100 pairs ({elapsed:.2}s)");
}

#[test]
fn criterion_02_cut_distance_bracket_and_tightness() {
    let started = Instant::now();
    for (n, seed_base) in [(10usize, 1000u64), (12, 2000)] {
        let mut ratios = Vec::with_capacity(50);
        for trial in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed_base + trial);
            let a = random_integer_net(n, &mut rng);
            let b = random_integer_net(n, &mut rng);
            let exact = cut_distance(&a, &b, CutMode::Exact).unwrap().lower;
            let sdp = cut_distance(&a, &b, CutMode::Sdp { seed: trial }).unwrap();
            assert!(
                sdp.lower <= exact + 1e-9 && exact <= sdp.upper + 1e-9,
                "n={n} trial {trial}: exact {exact} outside [{}, {}]",
                sdp.lower,
                sdp.upper
            );
            assert!(exact > 0.0, "degenerate zero cut at n={n} trial {trial}");
            ratios.push(sdp.lower / exact);
        }
        ratios.sort_by(f64::total_cmp);
        let median = (ratios[24] + ratios[25]) / 2.0;
        assert!(median >= 0.95, "n={n}: median lower/exact = {median:.4}");
        println!("criterion 2 (n={n}): median lower/exact = {median:.4} over 50 pairs, bracket held in all");
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "took {elapsed:.1}s, budget 120s");
    println!("criterion 2 PASS: brackets contained the exact value in 100/100 cases ({elapsed:.1}s)");
}

/// Iterates a marginal profile to the fixed point where its relevance
/// equals the expected inflow of its own gravity flows, so realized
/// marginals of generated samples match the generating profile.
fn self_consistent_profile(
    dist: &DistanceMatrix,
    params: &GravityParams,
    outflow_scale: f64,
    seed: u64,
) -> MarginalProfile {
    let n = dist.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outflows =
        Array1::from_shape_simple_fn(n, || (rng.random_range(10.0..30.0f64) * outflow_scale).round());
    let mut profile = MarginalProfile {
        outflows,
        relevance: Array1::from_shape_simple_fn(n, || rng.random_range(20.0..100.0f64)),
    };
    for _ in 0..200 {
        let rp = gravity_probabilities(&profile, dist, params).unwrap();
        let mut next = Array1::zeros(n);
        for i in 0..n {
            for j in 0..n {
                next[j] += profile.outflows[i] * rp.p[[i, j]];
            }
        }
        let shift = (&next - &profile.relevance).mapv(f64::abs).sum();
        profile.relevance = next;
        if shift < 1e-9 {
            break;
        }
    }
    profile
}

#[test]
fn criterion_03_gravity_row_sums_and_parameter_recovery() {
    let started = Instant::now();
    let dist = grid_distances(8, 8);
    let params = GravityParams::new(1.0, -2.0, Deterrence::Power);

    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let profile = MarginalProfile {
        outflows: Array1::from_shape_simple_fn(64, || rng.random_range(50.0..500.0f64).round()),
        relevance: Array1::from_shape_simple_fn(64, || rng.random_range(10.0..200.0f64)),
    };
    let expected = gravity_generate("d", &profile, &dist, &params, GenerationMode::Expected).unwrap();
    let mut worst_rel = 0.0f64;
    for i in 0..64 {
        let row_sum: f64 = expected.weights.row(i).sum();
        let rel = (row_sum - profile.outflows[i]).abs() / profile.outflows[i];
        worst_rel = worst_rel.max(rel);
    }
    assert!(worst_rel < 1e-9, "worst relative row-sum error {worst_rel:.3e}");

    let mut train_days = Vec::new();
    for day in 0..2u64 {
        let profile = self_consistent_profile(&dist, &params, 1000.0, 330 + day);
        let net = gravity_generate(
            &format!("2018-01-0{}", day + 1),
            &profile,
            &dist,
            &params,
            GenerationMode::Multinomial { seed: 77 + day },
        )
        .unwrap();
        train_days.push(net);
    }
    let total: f64 = train_days.iter().map(|n| n.total()).sum();
    assert!(total >= 1e6, "need at least 1e6 trips, got {total:.0}");
    let fit = fit_gravity(&train_days, &dist).unwrap();
    let beta1_err = (fit.beta1 - 1.0).abs() / 1.0;
    let beta2_err = (fit.beta2 - (-2.0)).abs() / 2.0;
    assert!(beta1_err <= 0.05, "beta1 = {} ({:.1}% off)", fit.beta1, beta1_err * 100.0);
    assert!(beta2_err <= 0.05, "beta2 = {} ({:.1}% off)", fit.beta2, beta2_err * 100.0);
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "took {elapsed:.1}s, budget 60s");
    println!(
        "criterion 3 PASS: row sums within {worst_rel:.2e} relative; refit ({:.4}, {:.4}) from {:.2e} trips ({elapsed:.1}s)",
        fit.beta1, fit.beta2, total
    );
}

#[test]
fn criterion_04_radiation_matches_brute_force_oracle() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + trial);
        let n = 10;
        // random symmetric tie-free distances
        let mut d = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.random_range(1.0..100.0f64);
                d[[i, j]] = v;
                d[[j, i]] = v;
            }
        }
        let dist = DistanceMatrix { d };
        let profile = MarginalProfile {
            outflows: Array1::from_shape_simple_fn(n, || rng.random_range(10.0..100.0f64).round()),
            relevance: Array1::from_shape_simple_fn(n, || rng.random_range(5.0..50.0f64)),
        };
        let got = radiation_generate("d", &profile, &dist, GenerationMode::Expected).unwrap();

        let m_total: f64 = profile.relevance.sum();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let s_ij: f64 = (0..n)
                    .filter(|&k| k != i && k != j && dist.d[[i, k]] < dist.d[[i, j]])
                    .map(|k| profile.relevance[k])
                    .sum();
                let m_i = profile.relevance[i];
                let m_j = profile.relevance[j];
                let want = profile.outflows[i] / (1.0 - m_i / m_total) * m_i * m_j
                    / ((m_i + s_ij) * (m_i + m_j + s_ij));
                let scale = want.abs().max(got.weights[[i, j]].abs()).max(1.0);
                worst = worst.max((got.weights[[i, j]] - want).abs() / scale);
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(worst < 1e-12, "worst deviation {worst:.3e}");
    assert!(elapsed < 10.0, "took {elapsed:.1}s, budget 10s");
    println!("criterion 4 PASS: max deviation from the direct evaluation {worst:.3e} over 20 instances ({elapsed:.2}s)");
}

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

/// Central-difference check of `analytic` against the scalar loss
/// `sum(probe * f(...))`; returns the worst relative error over all
/// entries whose gradients are not jointly negligible.
fn fd_check(values: &mut [f64], analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(values.len(), analytic.len());
    let mut worst = 0.0f64;
    for idx in 0..values.len() {
        let saved = values[idx];
        values[idx] = saved + FD_STEP;
        let up = loss(values);
        values[idx] = saved - FD_STEP;
        let down = loss(values);
        values[idx] = saved;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let scale = numeric.abs().max(analytic[idx].abs());
        if scale < 1e-8 {
            continue;
        }
        worst = worst.max((numeric - analytic[idx]).abs() / scale);
    }
    worst
}

fn probe_tensor(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Tensor4 {
    Tensor4::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0f64))
}

/// Random values bounded away from the ReLU kink so central differences
/// stay on one side of it.
fn kink_free_tensor(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Tensor4 {
    Tensor4::from_shape_simple_fn(shape, || {
        let sign = if rng.random_range(0.0..1.0f64) < 0.5 { -1.0 } else { 1.0 };
        sign * rng.random_range(0.1..1.0f64)
    })
}

fn weighted_sum(y: &Tensor4, probe: &Tensor4) -> f64 {
    y.iter().zip(probe.iter()).map(|(a, b)| a * b).sum()
}

#[test]
fn criterion_05_every_layer_passes_finite_difference_checks() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut report = Vec::new();

    // convolution: input, weight and bias gradients
    let mut worst_conv = 0.0f64;
    for _ in 0..20 {
        let (c_in, c_out) = (rng.random_range(1..=3usize), rng.random_range(1..=3usize));
        let k = rng.random_range(1..=3usize);
        let stride = rng.random_range(1..=2usize);
        let pad = rng.random_range(0..=1usize);
        let n = rng.random_range(1..=2usize);
        let h = rng.random_range(k.max(2)..=7usize);
        let w = rng.random_range(k.max(2)..=7usize);

        let mut conv = Conv2d::new(c_in, c_out, k, stride, pad);
        conv.init_dcgan(&mut rng);
        let x = probe_tensor((n, c_in, h, w), &mut rng);
        let (gh, gw) = conv.out_size(h, w).unwrap();
        let probe = probe_tensor((n, c_out, gh, gw), &mut rng);

        let (_, cache) = conv.forward(&x).unwrap();
        let dx = conv.backward(&cache, &probe).unwrap();

        let mut x_flat = x.clone();
        worst_conv = worst_conv.max(fd_check(
            x_flat.as_slice_mut().unwrap(),
            dx.as_slice().unwrap(),
            |vals| {
                let xin = Tensor4::from_shape_vec((n, c_in, h, w), vals.to_vec()).unwrap();
                weighted_sum(&conv.forward(&xin).unwrap().0, &probe)
            },
        ));
        let grad_w = conv.w.grad.clone();
        let mut w_vals = conv.w.value.clone();
        worst_conv = worst_conv.max(fd_check(
            w_vals.as_slice_mut().unwrap(),
            grad_w.as_slice().unwrap(),
            |vals| {
                let mut probe_layer = Conv2d::new(c_in, c_out, k, stride, pad);
                probe_layer.w.value.as_slice_mut().unwrap().copy_from_slice(vals);
                probe_layer.b.value.assign(&conv.b.value);
                weighted_sum(&probe_layer.forward(&x).unwrap().0, &probe)
            },
        ));
        let grad_b = conv.b.grad.clone();
        let mut b_vals = conv.b.value.clone();
        worst_conv = worst_conv.max(fd_check(
            b_vals.as_slice_mut().unwrap(),
            grad_b.as_slice().unwrap(),
            |vals| {
                let mut probe_layer = Conv2d::new(c_in, c_out, k, stride, pad);
                probe_layer.w.value.assign(&conv.w.value);
                probe_layer.b.value.as_slice_mut().unwrap().copy_from_slice(vals);
                weighted_sum(&probe_layer.forward(&x).unwrap().0, &probe)
            },
        ));
    }
    assert!(worst_conv < FD_TOL, "conv worst relative error {worst_conv:.3e}");
    report.push(format!("conv {worst_conv:.2e}"));

    // transposed convolution: input, weight and bias gradients
    let mut worst_convt = 0.0f64;
    for _ in 0..20 {
        let (c_in, c_out) = (rng.random_range(1..=3usize), rng.random_range(1..=3usize));
        let k = rng.random_range(1..=3usize);
        let stride = rng.random_range(1..=2usize);
        let pad = rng.random_range(0..=usize::from(k > 1));
        let n = rng.random_range(1..=2usize);
        let h = rng.random_range(2..=5usize);
        let w = rng.random_range(2..=5usize);
        let mut layer = ConvTranspose2d::new(c_in, c_out, k, stride, pad);
        if layer.out_size(h, w).is_err() {
            continue;
        }
        layer.init_dcgan(&mut rng);
        let x = probe_tensor((n, c_in, h, w), &mut rng);
        let (th, tw) = layer.out_size(h, w).unwrap();
        let probe = probe_tensor((n, c_out, th, tw), &mut rng);

        let (_, cache) = layer.forward(&x).unwrap();
        let dx = layer.backward(&cache, &probe).unwrap();

        let mut x_flat = x.clone();
        worst_convt = worst_convt.max(fd_check(
            x_flat.as_slice_mut().unwrap(),
            dx.as_slice().unwrap(),
            |vals| {
                let xin = Tensor4::from_shape_vec((n, c_in, h, w), vals.to_vec()).unwrap();
                weighted_sum(&layer.forward(&xin).unwrap().0, &probe)
            },
        ));
        let grad_w = layer.w.grad.clone();
        let mut w_vals = layer.w.value.clone();
        worst_convt = worst_convt.max(fd_check(
            w_vals.as_slice_mut().unwrap(),
            grad_w.as_slice().unwrap(),
            |vals| {
                let mut probe_layer = ConvTranspose2d::new(c_in, c_out, k, stride, pad);
                probe_layer.w.value.as_slice_mut().unwrap().copy_from_slice(vals);
                probe_layer.b.value.assign(&layer.b.value);
                weighted_sum(&probe_layer.forward(&x).unwrap().0, &probe)
            },
        ));
        let grad_b = layer.b.grad.clone();
        let mut b_vals = layer.b.value.clone();
        worst_convt = worst_convt.max(fd_check(
            b_vals.as_slice_mut().unwrap(),
            grad_b.as_slice().unwrap(),
            |vals| {
                let mut probe_layer = ConvTranspose2d::new(c_in, c_out, k, stride, pad);
                probe_layer.w.value.assign(&layer.w.value);
                probe_layer.b.value.as_slice_mut().unwrap().copy_from_slice(vals);
                weighted_sum(&probe_layer.forward(&x).unwrap().0, &probe)
            },
        ));
    }
    assert!(worst_convt < FD_TOL, "convT worst relative error {worst_convt:.3e}");
    report.push(format!("convT {worst_convt:.2e}"));

    // adjoint identity: <conv(x), y> == <x, convT(y)> with shared weights
    let mut worst_adjoint = 0.0f64;
    for _ in 0..20 {
        let (c_in, c_out) = (rng.random_range(1..=3usize), rng.random_range(1..=3usize));
        let k = rng.random_range(1..=4usize);
        let stride = rng.random_range(1..=2usize);
        let pad = rng.random_range(0..=usize::from(k > 1));
        let n = rng.random_range(1..=2usize);
        let gh = rng.random_range(2..=4usize);
        let gw = rng.random_range(2..=4usize);
        // choose the input size so the kernel tiles it exactly
        let h = (gh - 1) * stride + k - 2 * pad;
        let w = (gw - 1) * stride + k - 2 * pad;

        let mut conv = Conv2d::new(c_in, c_out, k, stride, pad);
        conv.init_dcgan(&mut rng);
        conv.b.value.fill(0.0);
        let mut convt = ConvTranspose2d::new(c_out, c_in, k, stride, pad);
        convt.w.value.assign(&conv.w.value);
        convt.b.value.fill(0.0);

        let x = probe_tensor((n, c_in, h, w), &mut rng);
        let y = probe_tensor((n, c_out, gh, gw), &mut rng);
        let lhs = weighted_sum(&conv.forward(&x).unwrap().0, &y);
        let rhs = weighted_sum(&convt.forward(&y).unwrap().0, &x);
        worst_adjoint = worst_adjoint.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    assert!(worst_adjoint < 1e-10, "adjoint identity off by {worst_adjoint:.3e}");
    report.push(format!("adjoint {worst_adjoint:.2e}"));

    // batch norm: input, gamma and beta gradients in both modes
    let mut worst_bn = 0.0f64;
    for trial in 0..20 {
        let mode = if trial % 2 == 0 { BatchNormMode::Train } else { BatchNormMode::Eval };
        let c = rng.random_range(1..=4usize);
        let n = rng.random_range(2..=3usize);
        let h = rng.random_range(2..=5usize);
        let w = rng.random_range(2..=5usize);
        let mut bn = BatchNorm2d::new(c);
        bn.init_dcgan(&mut rng);
        for v in bn.running_mean.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        for v in bn.running_var.iter_mut() {
            *v = rng.random_range(0.5..2.0);
        }
        // freeze the running statistics so probing is stable
        bn.momentum = 0.0;
        let x = probe_tensor((n, c, h, w), &mut rng);
        let probe = probe_tensor((n, c, h, w), &mut rng);

        let (_, cache) = bn.forward(&x, mode).unwrap();
        let dx = bn.backward(&cache, &probe).unwrap();

        let mut x_flat = x.clone();
        worst_bn = worst_bn.max(fd_check(
            x_flat.as_slice_mut().unwrap(),
            dx.as_slice().unwrap(),
            |vals| {
                let xin = Tensor4::from_shape_vec((n, c, h, w), vals.to_vec()).unwrap();
                weighted_sum(&bn.forward(&xin, mode).unwrap().0, &probe)
            },
        ));
        let grad_gamma = bn.gamma.grad.clone();
        let mut gamma_vals = bn.gamma.value.clone();
        worst_bn = worst_bn.max(fd_check(
            gamma_vals.as_slice_mut().unwrap(),
            grad_gamma.as_slice().unwrap(),
            |vals| {
                let mut probe_bn = bn.clone();
                probe_bn.gamma.value.as_slice_mut().unwrap().copy_from_slice(vals);
                weighted_sum(&probe_bn.forward(&x, mode).unwrap().0, &probe)
            },
        ));
        let grad_beta = bn.beta.grad.clone();
        let mut beta_vals = bn.beta.value.clone();
        worst_bn = worst_bn.max(fd_check(
            beta_vals.as_slice_mut().unwrap(),
            grad_beta.as_slice().unwrap(),
            |vals| {
                let mut probe_bn = bn.clone();
                probe_bn.beta.value.as_slice_mut().unwrap().copy_from_slice(vals);
                weighted_sum(&probe_bn.forward(&x, mode).unwrap().0, &probe)
            },
        ));
    }
    assert!(worst_bn < FD_TOL, "batch norm worst relative error {worst_bn:.3e}");
    report.push(format!("batchnorm {worst_bn:.2e}"));

    // activations and the loss
    let mut worst_act = 0.0f64;
    for _ in 0..20 {
        let shape = (
            rng.random_range(1..=2usize),
            rng.random_range(1..=3usize),
            rng.random_range(1..=5usize),
            rng.random_range(1..=5usize),
        );
        let x = kink_free_tensor(shape, &mut rng);
        let probe = probe_tensor(shape, &mut rng);

        let dx = relu_backward(&x, &probe);
        let mut x_flat = x.clone();
        worst_act = worst_act.max(fd_check(
            x_flat.as_slice_mut().unwrap(),
            dx.as_slice().unwrap(),
            |vals| {
                let xin = Tensor4::from_shape_vec(shape, vals.to_vec()).unwrap();
                weighted_sum(&relu(&xin), &probe)
            },
        ));

        let dx = leaky_relu_backward(&x, &probe, 0.2);
        let mut x_flat = x.clone();
        worst_act = worst_act.max(fd_check(
            x_flat.as_slice_mut().unwrap(),
            dx.as_slice().unwrap(),
            |vals| {
                let xin = Tensor4::from_shape_vec(shape, vals.to_vec()).unwrap();
                weighted_sum(&leaky_relu(&xin, 0.2), &probe)
            },
        ));

        let y = sigmoid(&x);
        let dx = sigmoid_backward(&y, &probe);
        let mut x_flat = x.clone();
        worst_act = worst_act.max(fd_check(
            x_flat.as_slice_mut().unwrap(),
            dx.as_slice().unwrap(),
            |vals| {
                let xin = Tensor4::from_shape_vec(shape, vals.to_vec()).unwrap();
                weighted_sum(&sigmoid(&xin), &probe)
            },
        ));

        let pred = Tensor4::from_shape_simple_fn(shape, || rng.random_range(0.05..0.95f64));
        let target = Tensor4::from_shape_simple_fn(shape, || {
            f64::from(rng.random_range(0.0..1.0f64) < 0.5)
        });
        let grad = bce_backward(&pred, &target).unwrap();
        let mut p_flat = pred.clone();
        worst_act = worst_act.max(fd_check(
            p_flat.as_slice_mut().unwrap(),
            grad.as_slice().unwrap(),
            |vals| {
                let pin = Tensor4::from_shape_vec(shape, vals.to_vec()).unwrap();
                bce_loss(&pin, &target).unwrap()
            },
        ));
    }
    assert!(worst_act < FD_TOL, "activation/loss worst relative error {worst_act:.3e}");
    report.push(format!("activations {worst_act:.2e}"));

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "took {elapsed:.1}s, budget 60s");
    println!("criterion 5 PASS: worst relative errors {} ({elapsed:.1}s)", report.join(", "));
}

const PATTERN_CENTERS: [[(f64, f64); 2]; 3] = [
    [(10.0, 50.0), (30.0, 12.0)],
    [(50.0, 20.0), (16.0, 40.0)],
    [(40.0, 56.0), (8.0, 8.0)],
];
const PATTERN_SIGMA: f64 = 3.0;
const PATTERN_AMPLITUDE: f64 = 6.0;

fn pattern_intensity(pattern: usize) -> Array2<f64> {
    Array2::from_shape_fn((IMAGE_SIDE, IMAGE_SIDE), |(i, j)| {
        PATTERN_CENTERS[pattern]
            .iter()
            .map(|&(ci, cj)| {
                let di = i as f64 - ci;
                let dj = j as f64 - cj;
                PATTERN_AMPLITUDE * (-(di * di + dj * dj) / (2.0 * PATTERN_SIGMA * PATTERN_SIGMA)).exp()
            })
            .sum()
    })
}

/// Poisson draws around one of three fixed two-bump intensity fields.
fn toy_fixture(count: usize, seed: u64, tag: &str) -> Vec<MobilityNetwork> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intensities: Vec<Array2<f64>> = (0..3).map(pattern_intensity).collect();
    (0..count)
        .map(|idx| {
            let lambda = &intensities[idx % 3];
            let w = lambda.mapv(|l| {
                if l <= 1e-12 {
                    0.0
                } else {
                    Poisson::new(l).unwrap().sample(&mut rng)
                }
            });
            MobilityNetwork::new(format!("{tag}-{idx:03}"), w).unwrap()
        })
        .collect()
}

/// Relabels nodes by a random permutation; preserves the degree
/// sequence while destroying spatial alignment.
fn relabel_shuffle(net: &MobilityNetwork, rng: &mut ChaCha8Rng) -> MobilityNetwork {
    use rand::seq::SliceRandom;
    let n = net.n();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut w = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            w[[perm[i], perm[j]]] = net.weights[[i, j]];
        }
    }
    MobilityNetwork::new(format!("ctrl-{}", net.date), w).unwrap()
}

#[test]
fn criterion_06_toy_gan_converges_and_beats_shuffled_controls() {
    let started = Instant::now();
    let train_set = toy_fixture(292, 0xF1A7, "toy");
    let held_out = toy_fixture(50, 0xBEEF, "held");
    let cfg = GanConfig {
        epochs: 800,
        batch_size: 73,
        seed: 0xA11CE,
        ..GanConfig::default()
    };
    let (mut model, history) = train(&train_set, &cfg).unwrap();
    let train_secs = started.elapsed().as_secs_f64();

    let tail = &history.records[history.len() - 100..];
    let mean_real: f64 = tail.iter().map(|r| r.real_score).sum::<f64>() / tail.len() as f64;
    let mean_fake: f64 = tail.iter().map(|r| r.fake_score).sum::<f64>() / tail.len() as f64;
    assert!(
        (0.3..=0.7).contains(&mean_real),
        "mean real score over the final 100 iterations: {mean_real:.3}"
    );
    assert!(
        (0.3..=0.7).contains(&mean_fake),
        "mean fake score over the final 100 iterations: {mean_fake:.3}"
    );

    let generated = model.sample(50, 0x5EED).unwrap();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let controls: Vec<MobilityNetwork> =
        held_out.iter().map(|h| relabel_shuffle(h, &mut shuffle_rng)).collect();

    let mean_cpc = |a: &[MobilityNetwork], b: &[MobilityNetwork]| -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for g in a {
            for h in b {
                sum += cpc(g, h).unwrap();
                count += 1;
            }
        }
        sum / count as f64
    };
    let cpc_held = mean_cpc(&generated, &held_out);
    let cpc_control = mean_cpc(&generated, &controls);
    assert!(
        cpc_held >= 2.0 * cpc_control,
        "CPC vs held-out {cpc_held:.4} is below 2x CPC vs shuffled controls {cpc_control:.4}"
    );
    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "criterion 6 PASS: final-100 scores real {mean_real:.3} / fake {mean_fake:.3}; \
         CPC {cpc_held:.3} vs control {cpc_control:.3} (ratio {:.2}); \
         {} iterations, training {train_secs:.0}s, total {elapsed:.0}s on {} worker threads",
        cpc_held / cpc_control,
        history.len(),
        rayon::current_num_threads()
    );
}

#[test]
fn criterion_07_protocol_cardinalities() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let days: Vec<MobilityNetwork> = (0..730)
        .map(|i| {
            let w = Array2::from_shape_simple_fn((64, 64), || rng.random_range(0.0..30.0f64));
            MobilityNetwork::new(format!("day-{i:03}"), w).unwrap()
        })
        .collect();
    let (train_days, test_days) = split_networks(days, 146, 7).unwrap();
    assert_eq!(train_days.len(), 584);
    assert_eq!(test_days.len(), 146);

    let synthetic: Vec<MobilityNetwork> = (0..146)
        .map(|i| {
            let w = Array2::from_shape_simple_fn((64, 64), || rng.random_range(0.0..30.0f64));
            MobilityNetwork::new(format!("synthetic-{i:03}"), w).unwrap()
        })
        .collect();

    let members = build_mixed_set(146, 146, 3).unwrap();
    let halves = members.iter().filter(|m| m.from_test).count();
    assert_eq!(halves, 73);
    assert_eq!(members.len() - halves, 73);

    let sources = vec![("mogan".to_string(), synthetic)];
    let ctx = MetricContext::default();
    let result = run_protocol(&test_days, &sources, &[MetricName::Rmse], &ctx, 11).unwrap();
    assert_eq!(result.test_scores[&MetricName::Rmse].len(), 10_585);
    let eval = &result.models[0];
    assert_eq!(eval.synthetic_scores[&MetricName::Rmse].len(), 10_585);
    assert_eq!(eval.mixed_scores[&MetricName::Rmse].len(), 10_585);
    assert_eq!(eval.cross_scores[&MetricName::Rmse].len(), 21_316);
    println!(
        "criterion 7 PASS: split 584/146, mixed 73+73, within-set lists 10585, cross lists 21316"
    );
}

#[test]
fn criterion_08_self_test_degenerates_to_zero_divergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let n = 16;
    let test_set: Vec<MobilityNetwork> = (0..6)
        .map(|i| {
            let w = Array2::from_shape_simple_fn((n, n), || rng.random_range(0.0..25.0f64).floor());
            MobilityNetwork::new(format!("t{i}"), w).unwrap()
        })
        .collect();
    let clones: Vec<MobilityNetwork> = test_set
        .iter()
        .map(|t| MobilityNetwork::new(format!("s-{}", t.date), t.weights.clone()).unwrap())
        .collect();
    let baseline: Vec<MobilityNetwork> = (0..6)
        .map(|i| {
            let w = Array2::from_shape_simple_fn((n, n), || rng.random_range(0.0..25.0f64).floor());
            MobilityNetwork::new(format!("b{i}"), w).unwrap()
        })
        .collect();
    let dist = grid_distances(4, 4);
    let ctx = MetricContext { dist: Some(&dist), cut_mode: CutMode::Exact };
    let sources = vec![("mogan".to_string(), clones), ("gravity".to_string(), baseline)];
    let result = run_protocol(&test_set, &sources, &MetricName::ALL, &ctx, 88).unwrap();

    for entry in result.report.entries.iter().filter(|e| e.model == "mogan") {
        assert_eq!(entry.js_s, 0.0, "js_s for metric {}", entry.metric);
    }
    let mut checked = 0;
    for delta in &result.report.deltas {
        let baseline_entry = result
            .report
            .entries
            .iter()
            .find(|e| e.model == delta.baseline && e.metric == delta.metric)
            .unwrap();
        if baseline_entry.js_s > 0.0 {
            let d = delta.delta_s.unwrap();
            assert!((d - 100.0).abs() < 1e-9, "delta_s = {d} for metric {}", delta.metric);
            checked += 1;
        }
    }
    assert!(checked > 0, "no baseline had positive divergence");
    println!(
        "criterion 8 PASS: js_s = 0 on all {} metrics; improvement = 100% against {checked} positive baselines",
        MetricName::ALL.len()
    );
}

#[test]
fn criterion_09_divergence_math() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst_asym = 0.0f64;
    let mut worst_self = 0.0f64;
    let mut max_seen = 0.0f64;
    for _ in 0..1000 {
        let lo = rng.random_range(-5.0..0.0f64);
        let hi = rng.random_range(1.0..6.0f64);
        let xs: Vec<f64> = (0..80).map(|_| rng.random_range(lo..hi)).collect();
        let ys: Vec<f64> = (0..90).map(|_| rng.random_range(lo..hi)).collect();
        let p = histogram_in_range(&xs, JS_BINS, lo, hi);
        let q = histogram_in_range(&ys, JS_BINS, lo, hi);
        let pq = js_divergence(&p, &q).unwrap();
        let qp = js_divergence(&q, &p).unwrap();
        worst_asym = worst_asym.max((pq - qp).abs());
        worst_self = worst_self.max(js_divergence(&p, &p).unwrap());
        assert!(pq >= 0.0);
        max_seen = max_seen.max(pq);
    }
    assert!(worst_asym < 1e-15, "asymmetry {worst_asym:.3e}");
    assert_eq!(worst_self, 0.0);
    assert!(max_seen <= std::f64::consts::LN_2 + 1e-12, "max JS {max_seen}");

    let p = histogram_in_range(&[0.1; 30], JS_BINS, 0.0, 1.0);
    let q = histogram_in_range(&[0.9; 30], JS_BINS, 0.0, 1.0);
    let disjoint = js_divergence(&p, &q).unwrap();
    assert_eq!(disjoint, std::f64::consts::LN_2);
    println!(
        "criterion 9 PASS: symmetric to {worst_asym:.1e}, self-divergence 0, bounded by ln 2, disjoint supports reach ln 2 exactly"
    );
}

#[test]
#[ignore = "full replication needs the four public trip datasets and a 6000-epoch training run; \
            see the README for the replication procedure"]
fn criterion_11_full_replication() {
    // Intentionally not desk-scale: ingest the public releases, train with
    // default config, and compare the report tables against the published
    // orderings.
}
