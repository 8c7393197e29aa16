//! Classical flow generators used as baselines: the singly-constrained
//! gravity model (with maximum-likelihood parameter fitting) and the
//! radiation model. Both distribute each origin's observed outflow over
//! destinations; neither produces self-loops.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{marginals, MarginalProfile};
use crate::net::{DistanceMatrix, MobilityNetwork};
use crate::{Error, Result};

/// Distance-decay family for the gravity model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Deterrence {
    /// f(r) = r^beta2
    Power,
    /// f(r) = exp(beta2 * r), r in kilometers
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityParams {
    /// Exponent on destination relevance.
    pub beta1: f64,
    /// Deterrence parameter.
    pub beta2: f64,
    pub deterrence: Deterrence,
}

impl GravityParams {
    pub fn new(beta1: f64, beta2: f64, deterrence: Deterrence) -> Self {
        GravityParams {
            beta1,
            beta2,
            deterrence,
        }
    }
}

/// How a generator turns expected flows into a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerationMode {
    /// Deterministic mean flows (real-valued).
    Expected,
    /// Integer flows: each origin row is one multinomial draw of its outflow
    /// over the destination probabilities.
    Multinomial { seed: u64 },
}

/// Row-stochastic destination probabilities plus a note of which origin rows
/// had no admissible destination at all (those rows are left at zero).
#[derive(Debug, Clone, PartialEq)]
pub struct RowProbabilities {
    pub p: Array2<f64>,
    pub empty_rows: Vec<usize>,
}

fn deterrence_value(deterrence: Deterrence, beta2: f64, d_meters: f64) -> f64 {
    let r_km = d_meters / 1000.0;
    match deterrence {
        Deterrence::Power => r_km.powf(beta2),
        Deterrence::Exponential => (beta2 * r_km).exp(),
    }
}

/// Gravity destination probabilities: p[i][j] proportional to
/// `m_j^beta1 * f(r_ij)` over j != i, normalized per row. Destinations with
/// zero relevance are inadmissible; the diagonal is zero.
pub fn gravity_probabilities(
    profile: &MarginalProfile,
    dist: &DistanceMatrix,
    params: &GravityParams,
) -> Result<RowProbabilities> {
    let n = dist.n();
    if profile.relevance.len() != n {
        return Err(Error::Shape(format!(
            "profile has {} nodes but distance matrix has {n}",
            profile.relevance.len()
        )));
    }
    if !params.beta1.is_finite() || !params.beta2.is_finite() {
        return Err(Error::InvalidInput("gravity parameters must be finite".into()));
    }
    let mut p = Array2::zeros((n, n));
    let mut empty_rows = Vec::new();
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let m = profile.relevance[j];
            if m <= 0.0 {
                continue;
            }
            let w = m.powf(params.beta1) * deterrence_value(params.deterrence, params.beta2, dist.d[[i, j]]);
            p[[i, j]] = w;
            total += w;
        }
        if total > 0.0 {
            for j in 0..n {
                p[[i, j]] /= total;
            }
        } else {
            empty_rows.push(i);
        }
    }
    Ok(RowProbabilities { p, empty_rows })
}

/// One multinomial draw of `n` trials over (unnormalized, nonnegative)
/// weights, by sequential conditional binomials. The returned counts always
/// sum to exactly `n` when the weights have positive total.
pub fn sample_multinomial(rng: &mut ChaCha8Rng, n: u64, weights: &[f64]) -> Vec<u64> {
    let mut counts = vec![0u64; weights.len()];
    let mut rest: f64 = weights.iter().sum();
    if rest <= 0.0 || n == 0 {
        return counts;
    }
    let mut remaining = n;
    let mut last_positive = 0;
    for (j, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = j;
        }
    }
    for (j, &w) in weights.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if w <= 0.0 {
            continue;
        }
        if j == last_positive {
            counts[j] = remaining;
            break;
        }
        let p = (w / rest).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, p).expect("valid binomial").sample(rng);
        counts[j] = draw;
        remaining -= draw;
        rest -= w;
    }
    counts
}

fn rounded_outflow(o: f64) -> u64 {
    o.round().max(0.0) as u64
}

/// Generate one gravity network. EXPECTED mode gives `O_i * p[i][j]`;
/// MULTINOMIAL mode samples integer rows summing to exactly `O_i` (rounded).
pub fn gravity_generate(
    date: &str,
    profile: &MarginalProfile,
    dist: &DistanceMatrix,
    params: &GravityParams,
    mode: GenerationMode,
) -> Result<MobilityNetwork> {
    let probs = gravity_probabilities(profile, dist, params)?;
    generate_from_rows(date, profile, &probs.p, mode)
}

fn generate_from_rows(
    date: &str,
    profile: &MarginalProfile,
    p: &Array2<f64>,
    mode: GenerationMode,
) -> Result<MobilityNetwork> {
    let n = p.nrows();
    let mut w = Array2::zeros((n, n));
    match mode {
        GenerationMode::Expected => {
            for i in 0..n {
                let o = profile.outflows[i];
                for j in 0..n {
                    w[[i, j]] = o * p[[i, j]];
                }
            }
        }
        GenerationMode::Multinomial { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in 0..n {
                let row: Vec<f64> = p.row(i).to_vec();
                let counts = sample_multinomial(&mut rng, rounded_outflow(profile.outflows[i]), &row);
                for (j, c) in counts.into_iter().enumerate() {
                    w[[i, j]] = c as f64;
                }
            }
        }
    }
    MobilityNetwork::new(date, w)
}

/// `s[i][j]`: total relevance of locations strictly closer to i than j is
/// (excluding i and j themselves; exact distance ties are not counted).
pub fn intervening_opportunities(profile: &MarginalProfile, dist: &DistanceMatrix) -> Array2<f64> {
    let n = dist.n();
    let mut s = Array2::zeros((n, n));
    let mut order: Vec<usize> = Vec::with_capacity(n.saturating_sub(1));
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        order.sort_by(|&a, &b| dist.d[[i, a]].total_cmp(&dist.d[[i, b]]));
        let mut closer = 0.0;
        let mut k = 0;
        while k < order.len() {
            // locations at exactly the same distance share one s value and
            // do not count toward each other
            let d_group = dist.d[[i, order[k]]];
            let mut end = k;
            let mut group_mass = 0.0;
            while end < order.len() && dist.d[[i, order[end]]] == d_group {
                s[[i, order[end]]] = closer;
                group_mass += profile.relevance[order[end]];
                end += 1;
            }
            closer += group_mass;
            k = end;
        }
    }
    s
}

/// Generate one radiation network. EXPECTED mode evaluates the model's mean
/// flow for every ordered pair (diagonal zero); MULTINOMIAL normalizes each
/// origin row and samples integer flows summing to exactly `O_i`.
///
/// Origins with zero relevance produce zero rows in both modes: the model
/// assigns them no admissible destination.
pub fn radiation_generate(
    date: &str,
    profile: &MarginalProfile,
    dist: &DistanceMatrix,
    mode: GenerationMode,
) -> Result<MobilityNetwork> {
    let n = dist.n();
    if profile.relevance.len() != n {
        return Err(Error::Shape(format!(
            "profile has {} nodes but distance matrix has {n}",
            profile.relevance.len()
        )));
    }
    let m_total: f64 = profile.relevance.sum();
    if m_total <= 0.0 {
        return Err(Error::InvalidInput("total relevance must be positive".into()));
    }
    for i in 0..n {
        if profile.outflows[i] > 0.0 && profile.relevance[i] >= m_total && n > 1 {
            return Err(Error::Numeric(format!(
                "radiation model diverges at origin {i}: its relevance equals the total"
            )));
        }
    }
    let s = intervening_opportunities(profile, dist);
    let mut terms = Array2::zeros((n, n));
    for i in 0..n {
        let m_i = profile.relevance[i];
        let finite_size = 1.0 / (1.0 - m_i / m_total);
        for j in 0..n {
            if j == i {
                continue;
            }
            let m_j = profile.relevance[j];
            let s_ij = s[[i, j]];
            let denom = (m_i + s_ij) * (m_i + m_j + s_ij);
            if denom > 0.0 {
                terms[[i, j]] = finite_size * m_i * m_j / denom;
            }
        }
    }
    match mode {
        GenerationMode::Expected => {
            let mut w = terms;
            for i in 0..n {
                let o = profile.outflows[i];
                for j in 0..n {
                    w[[i, j]] *= o;
                }
            }
            MobilityNetwork::new(date, w)
        }
        GenerationMode::Multinomial { .. } => generate_from_rows(date, profile, &terms, mode),
    }
}

/// Stable label-derived stream seed (FNV-1a folded over the label), so per-day
/// generation can run in parallel with reproducible per-day randomness.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ base.rotate_left(17);
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ base
}

/// Generate one synthetic network per reference day, using that day's
/// marginals. MULTINOMIAL seeds are derived per day from the base seed.
pub fn gravity_generate_set(
    reference: &[MobilityNetwork],
    dist: &DistanceMatrix,
    params: &GravityParams,
    mode: GenerationMode,
) -> Result<Vec<MobilityNetwork>> {
    reference
        .par_iter()
        .map(|net| {
            gravity_generate(&net.date, &marginals(net), dist, params, per_day_mode(mode, &net.date))
        })
        .collect()
}

/// Radiation analogue of [`gravity_generate_set`].
pub fn radiation_generate_set(
    reference: &[MobilityNetwork],
    dist: &DistanceMatrix,
    mode: GenerationMode,
) -> Result<Vec<MobilityNetwork>> {
    reference
        .par_iter()
        .map(|net| radiation_generate(&net.date, &marginals(net), dist, per_day_mode(mode, &net.date)))
        .collect()
}

fn per_day_mode(mode: GenerationMode, date: &str) -> GenerationMode {
    match mode {
        GenerationMode::Expected => GenerationMode::Expected,
        GenerationMode::Multinomial { seed } => GenerationMode::Multinomial {
            seed: derive_seed(seed, date),
        },
    }
}

/// A fitted gravity model: parameters plus the attained log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityFit {
    pub beta1: f64,
    pub beta2: f64,
    pub deterrence: Deterrence,
    pub loglik: f64,
}

impl GravityFit {
    pub fn params(&self) -> GravityParams {
        GravityParams::new(self.beta1, self.beta2, self.deterrence)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::parse(path, 0, e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}

/// Per-origin observation prepared for the likelihood: observed off-diagonal
/// flows and the two destination features (log-relevance and the distance
/// feature for the chosen deterrence family).
struct LogitRow {
    flows: Vec<f64>,
    x1: Vec<f64>,
    x2: Vec<f64>,
    total_flow: f64,
}

fn prepare_rows(
    train: &[MobilityNetwork],
    dist: &DistanceMatrix,
    deterrence: Deterrence,
) -> Result<Vec<LogitRow>> {
    let n = dist.n();
    let mut rows = Vec::new();
    for net in train {
        if net.n() != n {
            return Err(Error::Shape(format!(
                "network {} has {} nodes but distance matrix has {n}",
                net.date,
                net.n()
            )));
        }
        let profile = marginals(net);
        for i in 0..n {
            let mut row = LogitRow {
                flows: Vec::new(),
                x1: Vec::new(),
                x2: Vec::new(),
                total_flow: 0.0,
            };
            for j in 0..n {
                if j == i || profile.relevance[j] <= 0.0 {
                    continue;
                }
                let r_km = dist.d[[i, j]] / 1000.0;
                if r_km <= 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "distance between distinct nodes {i} and {j} must be positive"
                    )));
                }
                row.flows.push(net.weights[[i, j]]);
                row.x1.push(profile.relevance[j].ln());
                row.x2.push(match deterrence {
                    Deterrence::Power => r_km.ln(),
                    Deterrence::Exponential => r_km,
                });
                row.total_flow += net.weights[[i, j]];
            }
            // rows with one destination (or none) carry no information about
            // the parameters
            if row.total_flow > 0.0 && row.flows.len() >= 2 {
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Log-likelihood, gradient, and Hessian of the row-wise multinomial logit at
/// (beta1, beta2).
fn logit_eval(rows: &[LogitRow], beta: [f64; 2]) -> (f64, [f64; 2], [[f64; 2]; 2]) {
    let mut ll = 0.0;
    let mut grad = [0.0f64; 2];
    let mut hess = [[0.0f64; 2]; 2];
    let mut logits: Vec<f64> = Vec::new();
    for row in rows {
        logits.clear();
        logits.extend(
            row.x1
                .iter()
                .zip(&row.x2)
                .map(|(a, b)| beta[0] * a + beta[1] * b),
        );
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|t| (t - max).exp()).sum();
        let log_z = max + z.ln();
        let (mut e1, mut e2, mut e11, mut e12, mut e22) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (k, t) in logits.iter().enumerate() {
            let p = (t - max).exp() / z;
            let (a, b) = (row.x1[k], row.x2[k]);
            e1 += p * a;
            e2 += p * b;
            e11 += p * a * a;
            e12 += p * a * b;
            e22 += p * b * b;
            ll += row.flows[k] * (t - log_z);
            grad[0] += row.flows[k] * a;
            grad[1] += row.flows[k] * b;
        }
        grad[0] -= row.total_flow * e1;
        grad[1] -= row.total_flow * e2;
        hess[0][0] -= row.total_flow * (e11 - e1 * e1);
        hess[0][1] -= row.total_flow * (e12 - e1 * e2);
        hess[1][1] -= row.total_flow * (e22 - e2 * e2);
    }
    hess[1][0] = hess[0][1];
    (ll, grad, hess)
}

fn newton_ascend(rows: &[LogitRow], start: [f64; 2], scale: f64) -> ([f64; 2], f64, f64) {
    let mut beta = start;
    let (mut ll, mut grad, mut hess) = logit_eval(rows, beta);
    for _ in 0..100 {
        let gnorm = grad[0].hypot(grad[1]);
        if gnorm <= 1e-9 * scale.max(1.0) {
            break;
        }
        let det = hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0];
        let mut step = if det.abs() > 1e-30 {
            [
                -(hess[1][1] * grad[0] - hess[0][1] * grad[1]) / det,
                -(hess[0][0] * grad[1] - hess[1][0] * grad[0]) / det,
            ]
        } else {
            [grad[0] / scale.max(1.0), grad[1] / scale.max(1.0)]
        };
        // guard: take the gradient direction if the Newton step is not an
        // ascent direction
        if step[0] * grad[0] + step[1] * grad[1] <= 0.0 {
            step = [grad[0] / scale.max(1.0), grad[1] / scale.max(1.0)];
        }
        let slope = step[0] * grad[0] + step[1] * grad[1];
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = [beta[0] + t * step[0], beta[1] + t * step[1]];
            let (cand_ll, cand_grad, cand_hess) = logit_eval(rows, cand);
            if cand_ll >= ll + 1e-4 * t * slope {
                beta = cand;
                ll = cand_ll;
                grad = cand_grad;
                hess = cand_hess;
                accepted = true;
                break;
            }
            t /= 2.0;
        }
        if !accepted {
            break;
        }
    }
    (beta, ll, grad[0].hypot(grad[1]))
}

/// Fit gravity parameters by maximizing the multinomial likelihood of the
/// observed off-diagonal flows, aggregated over all training networks.
/// Newton ascent from (1, -2) plus seeded random restarts; the returned
/// point's gradient norm is below 1e-6 of the likelihood scale (the total
/// off-diagonal flow).
pub fn fit_gravity(train: &[MobilityNetwork], dist: &DistanceMatrix) -> Result<GravityFit> {
    fit_gravity_with(train, dist, Deterrence::Power)
}

/// [`fit_gravity`] with an explicit deterrence family.
pub fn fit_gravity_with(
    train: &[MobilityNetwork],
    dist: &DistanceMatrix,
    deterrence: Deterrence,
) -> Result<GravityFit> {
    if train.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let rows = prepare_rows(train, dist, deterrence)?;
    if rows.is_empty() {
        return Err(Error::Numeric(
            "degenerate training data: no origin with off-diagonal flow and two admissible destinations"
                .into(),
        ));
    }
    let scale: f64 = rows.iter().map(|r| r.total_flow).sum();
    let mut starts = vec![[1.0, -2.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(0xF17);
    for _ in 0..10 {
        use rand::Rng;
        starts.push([rng.random_range(0.0..3.0), rng.random_range(-4.0..0.0)]);
    }
    let mut best: Option<([f64; 2], f64, f64)> = None;
    for start in starts {
        let (beta, ll, gnorm) = newton_ascend(&rows, start, scale);
        if best.as_ref().is_none_or(|b| ll > b.1) {
            best = Some((beta, ll, gnorm));
        }
    }
    let (beta, loglik, gnorm) = best.unwrap();
    if !(gnorm <= 1e-6 * scale.max(1.0)) {
        return Err(Error::Numeric(format!(
            "gravity fit did not converge: gradient norm {gnorm:.3e} at ({}, {})",
            beta[0], beta[1]
        )));
    }
    Ok(GravityFit {
        beta1: beta[0],
        beta2: beta[1],
        deterrence,
        loglik,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_grid_tessellation, distance_matrix, BBox};
    use approx::assert_relative_eq;
    use ndarray::Array1;
    use proptest::prelude::*;
    use rand::Rng;

    fn grid_dist(n_side: usize) -> DistanceMatrix {
        let bbox = BBox::new(0.0, 0.0, 0.2, 0.2);
        let tess = build_grid_tessellation(bbox, n_side, n_side).unwrap();
        distance_matrix(&tess)
    }

    fn random_profile(n: usize, seed: u64) -> MarginalProfile {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MarginalProfile {
            outflows: Array1::from_shape_fn(n, |_| rng.random_range(50.0..500.0f64).round()),
            relevance: Array1::from_shape_fn(n, |_| rng.random_range(1.0..100.0f64)),
        }
    }

    /// Distance matrix with all pairwise distances distinct (no ties).
    fn scattered_dist(n: usize, seed: u64) -> DistanceMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)))
                .collect();
            let mut d = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        d[[i, j]] = crate::net::haversine_m(pts[i].0, pts[i].1, pts[j].0, pts[j].1);
                    }
                }
            }
            let mut all: Vec<f64> = (0..n)
                .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .map(|(i, j)| d[[i, j]])
                .collect();
            all.sort_by(f64::total_cmp);
            if all.first().copied().unwrap_or(1.0) > 0.0 && all.windows(2).all(|w| w[0] != w[1]) {
                return DistanceMatrix { d };
            }
        }
    }

    #[test]
    fn gravity_equal_destinations_split_evenly() {
        // origin 0 with two destinations of equal relevance and equal distance
        let mut d = Array2::zeros((3, 3));
        for (i, j, v) in [(0, 1, 1000.0), (0, 2, 1000.0), (1, 2, 1700.0)] {
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
        let dist = DistanceMatrix { d };
        let profile = MarginalProfile {
            outflows: Array1::from_vec(vec![10.0, 0.0, 0.0]),
            relevance: Array1::from_vec(vec![0.0, 3.0, 3.0]),
        };
        let params = GravityParams::new(1.0, -2.0, Deterrence::Power);
        let rp = gravity_probabilities(&profile, &dist, &params).unwrap();
        assert_relative_eq!(rp.p[[0, 1]], 0.5);
        assert_relative_eq!(rp.p[[0, 2]], 0.5);
        let net = gravity_generate("d", &profile, &dist, &params, GenerationMode::Expected).unwrap();
        assert_relative_eq!(net.weights[[0, 1]], 5.0);
        assert_relative_eq!(net.weights[[0, 2]], 5.0);
    }

    #[test]
    fn gravity_power_law_tradeoff() {
        // m=(2,8) at r=(1,2): 2*1^-2 = 2 and 8*2^-2 = 2, so an even split
        let mut d = Array2::zeros((3, 3));
        for (i, j, v) in [(0, 1, 1000.0), (0, 2, 2000.0), (1, 2, 1500.0)] {
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
        let dist = DistanceMatrix { d };
        let profile = MarginalProfile {
            outflows: Array1::from_vec(vec![12.0, 0.0, 0.0]),
            relevance: Array1::from_vec(vec![0.0, 2.0, 8.0]),
        };
        let params = GravityParams::new(1.0, -2.0, Deterrence::Power);
        let rp = gravity_probabilities(&profile, &dist, &params).unwrap();
        assert_relative_eq!(rp.p[[0, 1]], 0.5, max_relative = 1e-12);
        assert_relative_eq!(rp.p[[0, 2]], 0.5, max_relative = 1e-12);
        assert!(rp.empty_rows.is_empty());

        // with relevance only at node 0, origin 0 has nowhere to send flow
        let isolated = MarginalProfile {
            outflows: Array1::from_vec(vec![12.0, 0.0, 0.0]),
            relevance: Array1::from_vec(vec![5.0, 0.0, 0.0]),
        };
        let rp = gravity_probabilities(&isolated, &dist, &params).unwrap();
        assert_eq!(rp.empty_rows, vec![0]);
        assert!(rp.p.row(0).iter().all(|p| *p == 0.0));
    }

    #[test]
    fn gravity_rows_normalized_and_expected_matches_product() {
        let dist = grid_dist(8);
        let profile = random_profile(64, 5);
        let params = GravityParams::new(1.3, -1.7, Deterrence::Power);
        let rp = gravity_probabilities(&profile, &dist, &params).unwrap();
        assert!(rp.empty_rows.is_empty());
        for i in 0..64 {
            assert_relative_eq!(rp.p.row(i).sum(), 1.0, max_relative = 1e-12);
            assert_eq!(rp.p[[i, i]], 0.0);
        }
        let net =
            gravity_generate("d", &profile, &dist, &params, GenerationMode::Expected).unwrap();
        // against an explicit diag(O) * P product
        for i in 0..64 {
            for j in 0..64 {
                let direct = profile.outflows[i] * rp.p[[i, j]];
                assert_relative_eq!(net.weights[[i, j]], direct, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn gravity_multinomial_row_sums_exact() {
        let dist = grid_dist(8);
        let profile = random_profile(64, 6);
        let params = GravityParams::new(1.0, -2.0, Deterrence::Power);
        let net = gravity_generate(
            "d",
            &profile,
            &dist,
            &params,
            GenerationMode::Multinomial { seed: 42 },
        )
        .unwrap();
        for i in 0..64 {
            assert_eq!(net.weights.row(i).sum(), profile.outflows[i]);
            assert_eq!(net.weights[[i, i]], 0.0);
            assert!(net.weights.row(i).iter().all(|w| *w >= 0.0 && w.fract() == 0.0));
        }
    }

    #[test]
    fn gravity_expected_row_sums() {
        let dist = grid_dist(8);
        let profile = random_profile(64, 7);
        for deterrence in [Deterrence::Power, Deterrence::Exponential] {
            let params = GravityParams::new(0.9, -1.1, deterrence);
            let net =
                gravity_generate("d", &profile, &dist, &params, GenerationMode::Expected).unwrap();
            for i in 0..64 {
                assert_relative_eq!(net.weights.row(i).sum(), profile.outflows[i], max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn intervening_opportunities_against_triple_loop() {
        let dist = scattered_dist(10, 3);
        let mut profile = random_profile(10, 4);
        // integer masses (like real drop-off counts) make both summation
        // orders exact, so the comparison can demand equality
        profile.relevance.mapv_inplace(f64::round);
        let s = intervening_opportunities(&profile, &dist);
        for i in 0..10 {
            for j in 0..10 {
                let mut brute = 0.0;
                if i != j {
                    for k in 0..10 {
                        if k != i && k != j && dist.d[[i, k]] < dist.d[[i, j]] {
                            brute += profile.relevance[k];
                        }
                    }
                }
                assert_eq!(s[[i, j]], brute, "i={i} j={j}");
            }
        }
    }

    #[test]
    fn intervening_opportunities_nearest_and_collinear() {
        // three points on a line: 0 -- 1 -- 2
        let mut d = Array2::zeros((3, 3));
        for (i, j, v) in [(0, 1, 1000.0), (1, 2, 1000.0), (0, 2, 2000.0)] {
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
        let dist = DistanceMatrix { d };
        let profile = MarginalProfile {
            outflows: Array1::from_vec(vec![5.0, 5.0, 5.0]),
            relevance: Array1::from_vec(vec![2.0, 2.0, 2.0]),
        };
        let s = intervening_opportunities(&profile, &dist);
        assert_eq!(s[[0, 1]], 0.0);
        assert_eq!(s[[0, 2]], 2.0);
        assert_eq!(s[[2, 0]], 2.0);
    }

    #[test]
    fn radiation_forced_single_destination() {
        let mut d = Array2::zeros((2, 2));
        d[[0, 1]] = 1500.0;
        d[[1, 0]] = 1500.0;
        let dist = DistanceMatrix { d };
        let profile = MarginalProfile {
            outflows: Array1::from_vec(vec![10.0, 0.0]),
            relevance: Array1::from_vec(vec![3.0, 3.0]),
        };
        let net = radiation_generate("d", &profile, &dist, GenerationMode::Expected).unwrap();
        assert_relative_eq!(net.weights[[0, 1]], 10.0, max_relative = 1e-12);
    }

    #[test]
    fn radiation_nearest_neighbor_value() {
        // four locations of unit relevance; flow to the nearest destination is
        // O * (1/(1 - 1/4)) * 1/((1+0)(2+0)) = O * 2/3
        let dist = scattered_dist(4, 9);
        let profile = MarginalProfile {
            outflows: Array1::from_vec(vec![30.0, 0.0, 0.0, 0.0]),
            relevance: Array1::from_vec(vec![1.0, 1.0, 1.0, 1.0]),
        };
        let nearest = (1..4)
            .min_by(|&a, &b| dist.d[[0, a]].total_cmp(&dist.d[[0, b]]))
            .unwrap();
        let net = radiation_generate("d", &profile, &dist, GenerationMode::Expected).unwrap();
        assert_relative_eq!(net.weights[[0, nearest]], 20.0, max_relative = 1e-12);
    }

    #[test]
    fn radiation_matches_direct_formula() {
        let dist = scattered_dist(10, 11);
        let profile = random_profile(10, 12);
        let net = radiation_generate("d", &profile, &dist, GenerationMode::Expected).unwrap();
        let m_total: f64 = profile.relevance.sum();
        for i in 0..10 {
            for j in 0..10 {
                if i == j {
                    assert_eq!(net.weights[[i, j]], 0.0);
                    continue;
                }
                let mut s = 0.0;
                for k in 0..10 {
                    if k != i && k != j && dist.d[[i, k]] < dist.d[[i, j]] {
                        s += profile.relevance[k];
                    }
                }
                let (m_i, m_j) = (profile.relevance[i], profile.relevance[j]);
                let direct = profile.outflows[i] / (1.0 - m_i / m_total) * m_i * m_j
                    / ((m_i + s) * (m_i + m_j + s));
                assert_relative_eq!(net.weights[[i, j]], direct, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn radiation_row_sums_on_tie_free_instances() {
        let dist = scattered_dist(12, 21);
        let profile = random_profile(12, 22);
        let net = radiation_generate("d", &profile, &dist, GenerationMode::Expected).unwrap();
        for i in 0..12 {
            assert_relative_eq!(net.weights.row(i).sum(), profile.outflows[i], max_relative = 1e-9);
        }
        let sampled = radiation_generate(
            "d",
            &profile,
            &dist,
            GenerationMode::Multinomial { seed: 5 },
        )
        .unwrap();
        for i in 0..12 {
            assert_eq!(sampled.weights.row(i).sum(), profile.outflows[i]);
        }
    }

    #[test]
    fn radiation_total_relevance_errors() {
        let mut d = Array2::zeros((2, 2));
        d[[0, 1]] = 1000.0;
        d[[1, 0]] = 1000.0;
        let dist = DistanceMatrix { d };
        let profile = MarginalProfile {
            outflows: Array1::from_vec(vec![10.0, 0.0]),
            relevance: Array1::from_vec(vec![4.0, 0.0]),
        };
        let err = radiation_generate("d", &profile, &dist, GenerationMode::Expected).unwrap_err();
        assert!(err.to_string().contains("origin 0"), "{err}");
    }

    /// Profile whose relevance equals the expected drop-offs of its own
    /// gravity flows, so a generated network's marginals reproduce the
    /// profile that generated it.
    pub(crate) fn self_consistent_profile(
        dist: &DistanceMatrix,
        params: &GravityParams,
        outflow_scale: f64,
        seed: u64,
    ) -> MarginalProfile {
        let n = dist.n();
        let mut profile = random_profile(n, seed);
        profile.outflows.mapv_inplace(|o| (o * outflow_scale).round());
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
    fn fit_recovers_generating_parameters() {
        let dist = grid_dist(8);
        let true_params = GravityParams::new(1.0, -2.0, Deterrence::Power);
        let mut train = Vec::new();
        for day in 0..3u64 {
            let profile = self_consistent_profile(&dist, &true_params, 50.0, 100 + day);
            let net = gravity_generate(
                &format!("2018-01-0{}", day + 1),
                &profile,
                &dist,
                &true_params,
                GenerationMode::Multinomial { seed: day },
            )
            .unwrap();
            train.push(net);
        }
        let total: f64 = train.iter().map(|n| n.total()).sum();
        assert!(total >= 1e6, "want a large sample, got {total}");
        let fit = fit_gravity(&train, &dist).unwrap();
        assert!((fit.beta1 - 1.0).abs() < 0.05, "beta1 = {}", fit.beta1);
        assert!((fit.beta2 + 2.0).abs() < 0.10, "beta2 = {}", fit.beta2);
    }

    #[test]
    fn fit_detects_distance_independence() {
        let dist = grid_dist(8);
        let true_params = GravityParams::new(1.5, 0.0, Deterrence::Power);
        let profile = self_consistent_profile(&dist, &true_params, 100.0, 200);
        let net = gravity_generate(
            "2018-01-01",
            &profile,
            &dist,
            &true_params,
            GenerationMode::Multinomial { seed: 77 },
        )
        .unwrap();
        let fit = fit_gravity(&[net], &dist).unwrap();
        assert!(fit.beta2.abs() < 0.05, "beta2 = {}", fit.beta2);
    }

    #[test]
    fn fit_rejects_degenerate_data() {
        let dist = grid_dist(2);
        // all flow on the diagonal
        let mut w = Array2::zeros((4, 4));
        w[[1, 1]] = 50.0;
        let net = MobilityNetwork::new("d", w).unwrap();
        assert!(fit_gravity(&[net], &dist).is_err());
        // every trip into a single destination: relevance is positive only
        // there, so no origin sees two admissible destinations
        let mut w = Array2::zeros((4, 4));
        w[[0, 2]] = 30.0;
        w[[1, 2]] = 10.0;
        w[[3, 2]] = 20.0;
        let net = MobilityNetwork::new("d", w).unwrap();
        assert!(fit_gravity(&[net], &dist).is_err());
        assert!(fit_gravity(&[], &dist).is_err());
    }

    #[test]
    fn fit_roundtrips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gravity.json");
        let fit = GravityFit {
            beta1: 1.25,
            beta2: -1.75,
            deterrence: Deterrence::Power,
            loglik: -1234.5,
        };
        fit.save(&path).unwrap();
        assert_eq!(GravityFit::load(&path).unwrap(), fit);
    }

    #[test]
    fn generate_sets_are_parallel_order_independent() {
        let dist = grid_dist(8);
        let nets: Vec<MobilityNetwork> = (0..6)
            .map(|i| {
                let profile = random_profile(64, 300 + i);
                gravity_generate(
                    &format!("2018-02-0{}", i + 1),
                    &profile,
                    &dist,
                    &GravityParams::new(1.0, -2.0, Deterrence::Power),
                    GenerationMode::Expected,
                )
                .unwrap()
            })
            .collect();
        let params = GravityParams::new(1.1, -1.9, Deterrence::Power);
        let mode = GenerationMode::Multinomial { seed: 9 };
        let a = gravity_generate_set(&nets, &dist, &params, mode).unwrap();
        let b = gravity_generate_set(&nets, &dist, &params, mode).unwrap();
        assert_eq!(a, b);
        let r1 = radiation_generate_set(&nets, &dist, mode).unwrap();
        let r2 = radiation_generate_set(&nets, &dist, mode).unwrap();
        assert_eq!(r1, r2);
    }

    proptest! {
        #[test]
        fn gravity_probabilities_scale_invariant(c in 0.1..50.0f64, seed in 0u64..50) {
            let dist = grid_dist(4);
            let profile = random_profile(16, seed);
            let scaled = MarginalProfile {
                outflows: profile.outflows.clone(),
                relevance: profile.relevance.mapv(|m| m * c),
            };
            let params = GravityParams::new(1.2, -1.4, Deterrence::Power);
            let a = gravity_probabilities(&profile, &dist, &params).unwrap();
            let b = gravity_probabilities(&scaled, &dist, &params).unwrap();
            for (x, y) in a.p.iter().zip(b.p.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn radiation_distance_rescale_invariant(c in 0.1..20.0f64, seed in 0u64..50) {
            let dist = scattered_dist(8, seed);
            let scaled = DistanceMatrix { d: dist.d.mapv(|v| v * c) };
            let profile = random_profile(8, seed + 1000);
            let a = radiation_generate("d", &profile, &dist, GenerationMode::Expected).unwrap();
            let b = radiation_generate("d", &profile, &scaled, GenerationMode::Expected).unwrap();
            for (x, y) in a.weights.iter().zip(b.weights.iter()) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }

        #[test]
        fn multinomial_counts_sum_to_n(n in 0u64..5000, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let weights: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..3.0f64)).collect();
            let counts = sample_multinomial(&mut rng, n, &weights);
            prop_assert_eq!(counts.iter().sum::<u64>(), if weights.iter().sum::<f64>() > 0.0 { n } else { 0 });
        }
    }
}
