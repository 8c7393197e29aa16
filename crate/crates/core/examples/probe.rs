// Scratch instrumentation run for the toy-fixture training dynamics.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use mobinet_core::metrics::cpc;
use mobinet_core::mogan::{train_with, GanConfig, IMAGE_SIDE};
use mobinet_core::net::MobilityNetwork;

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

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let train_set = toy_fixture(292, 0xF1A7, "toy");
    let held_out = toy_fixture(50, 0xBEEF, "held");
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let controls: Vec<MobilityNetwork> =
        held_out.iter().map(|h| relabel_shuffle(h, &mut shuffle_rng)).collect();
    let real_mass: f64 =
        train_set.iter().map(|n| n.total()).sum::<f64>() / train_set.len() as f64;
    println!("fixture: mean real mass {real_mass:.0}, sigma {PATTERN_SIGMA}, amplitude {PATTERN_AMPLITUDE}");

    let cfg = GanConfig { epochs, batch_size: 73, seed: 0xA11CE, ..GanConfig::default() };
    let t0 = Instant::now();
    let (mut model, history) = train_with(&train_set, &cfg, |epoch, model, history| {
        if (epoch + 1) % 5 == 0 {
            let rec = history.records.last().unwrap();
            let mut line = format!(
                "epoch {:4}/{epochs} iter {:5} d_loss {:.3} g_loss {:.3} real {:.3} fake {:.3} [{:5.0}s]",
                epoch + 1,
                history.len(),
                rec.d_loss,
                rec.g_loss,
                rec.real_score,
                rec.fake_score,
                t0.elapsed().as_secs_f64(),
            );
            if (epoch + 1) % 25 == 0 {
                let sample = model.sample(8, 999).unwrap();
                let mass: f64 = sample.iter().map(|n| n.total()).sum::<f64>() / 8.0;
                let mut c_held = 0.0;
                let mut c_ctrl = 0.0;
                for g in &sample {
                    for h in held_out.iter().take(16) {
                        c_held += cpc(g, h).unwrap();
                    }
                    for c in controls.iter().take(16) {
                        c_ctrl += cpc(g, c).unwrap();
                    }
                }
                c_held /= 8.0 * 16.0;
                c_ctrl /= 8.0 * 16.0;
                line.push_str(&format!(
                    " | mass {mass:6.0} cpc {c_held:.3} ctrl {c_ctrl:.3} ratio {:.2}",
                    c_held / c_ctrl.max(1e-9)
                ));
            }
            println!("{line}");
        }
        Ok(())
    })
    .unwrap();

    let tail = &history.records[history.len().saturating_sub(100)..];
    let mean_real: f64 = tail.iter().map(|r| r.real_score).sum::<f64>() / tail.len() as f64;
    let mean_fake: f64 = tail.iter().map(|r| r.fake_score).sum::<f64>() / tail.len() as f64;
    println!("last-100 mean scores: real {mean_real:.3} fake {mean_fake:.3}");

    let generated = model.sample(50, 0x5EED).unwrap();
    let mut c_held = 0.0;
    let mut c_ctrl = 0.0;
    for g in &generated {
        for h in &held_out {
            c_held += cpc(g, h).unwrap();
        }
        for c in &controls {
            c_ctrl += cpc(g, c).unwrap();
        }
    }
    c_held /= 50.0 * 50.0;
    c_ctrl /= 50.0 * 50.0;
    let mass: f64 = generated.iter().map(|n| n.total()).sum::<f64>() / 50.0;
    println!(
        "final: mass {mass:.0} cpc {c_held:.4} ctrl {c_ctrl:.4} ratio {:.2} ({:.2} s/iter)",
        c_held / c_ctrl.max(1e-9),
        t0.elapsed().as_secs_f64() / history.len() as f64
    );
}
