//! Pairwise network comparison (RMSE, CPC, cut distance) and distribution
//! comparison (histograms, KL and JS divergence) over edge weights and
//! weight-distances.

mod cutdist;

pub use cutdist::{cut_distance, cut_norm_exact, CutDistanceResult, CutMode};

use crate::net::{
    weight_distance_transform, DistanceMatrix, MobilityNetwork, WEIGHT_DISTANCE_EPS,
};
use crate::{Error, Result};

/// Bin count used for every distribution comparison in the evaluation
/// protocol.
pub const JS_BINS: usize = 100;

/// Root-mean-square difference over all matrix elements (the Frobenius norm
/// of A - B divided by the square root of the element count).
pub fn rmse(a: &MobilityNetwork, b: &MobilityNetwork) -> Result<f64> {
    check_same_shape(a, b)?;
    let n2 = (a.n() * a.n()) as f64;
    let ss: f64 = a
        .weights
        .iter()
        .zip(b.weights.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((ss / n2).sqrt())
}

/// Common Part of Commuters (Sorensen-Dice index):
/// `2 sum(min(a, b)) / (sum(a) + sum(b))`, in [0, 1].
pub fn cpc(a: &MobilityNetwork, b: &MobilityNetwork) -> Result<f64> {
    check_same_shape(a, b)?;
    let mut common = 0.0;
    let mut total = 0.0;
    for (x, y) in a.weights.iter().zip(b.weights.iter()) {
        common += x.min(*y);
        total += x + y;
    }
    if total == 0.0 {
        return Err(Error::Numeric(
            "CPC is undefined when both networks are empty".into(),
        ));
    }
    Ok(2.0 * common / total)
}

fn check_same_shape(a: &MobilityNetwork, b: &MobilityNetwork) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::Shape(format!(
            "networks have {} and {} nodes",
            a.n(),
            b.n()
        )));
    }
    Ok(())
}

/// An equal-width histogram normalized to unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// Bin boundaries, length bins + 1, strictly increasing.
    pub edges: Vec<f64>,
    /// Per-bin probability mass, length bins; sums to 1 unless the input was
    /// empty.
    pub density: Vec<f64>,
    /// Number of samples binned.
    pub count: usize,
}

impl Histogram {
    /// True when the histogram was built from no data (density all zero).
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Histogram over `bins` equal-width bins spanning `[lo, hi]`. Values at a
/// shared bin edge count toward the upper bin; values outside the range are
/// clamped into the end bins. A degenerate range (lo == hi) is widened by
/// half a unit on each side.
pub fn histogram_in_range(values: &[f64], bins: usize, lo: f64, hi: f64) -> Histogram {
    assert!(bins >= 1, "need at least one bin");
    let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let raw = ((v - lo) / (hi - lo) * bins as f64).floor() as isize;
        counts[raw.clamp(0, bins as isize - 1) as usize] += 1;
    }
    let total = values.len();
    let density = counts
        .iter()
        .map(|&c| if total > 0 { c as f64 / total as f64 } else { 0.0 })
        .collect();
    Histogram {
        edges,
        density,
        count: total,
    }
}

/// Histogram spanning the min/max of `values` itself.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return histogram_in_range(values, bins, 0.0, 1.0);
    }
    histogram_in_range(values, bins, lo, hi)
}

fn check_same_edges(p: &Histogram, q: &Histogram) -> Result<()> {
    if p.edges != q.edges {
        return Err(Error::InvalidInput(
            "histograms have different bin edges".into(),
        ));
    }
    Ok(())
}

/// Kullback-Leibler divergence `sum p ln(p/q)` in nats, with 0 ln 0 = 0.
/// Infinite when some bin has p > 0 but q = 0.
pub fn kl_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    check_same_edges(p, q)?;
    let mut kl = 0.0;
    for (&pi, &qi) in p.density.iter().zip(&q.density) {
        if pi > 0.0 {
            if qi == 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl)
}

/// Jensen-Shannon divergence `KL(P||M)/2 + KL(Q||M)/2` with `M = (P+Q)/2`,
/// in nats; symmetric and bounded by ln 2.
pub fn js_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    check_same_edges(p, q)?;
    let m = Histogram {
        edges: p.edges.clone(),
        density: p
            .density
            .iter()
            .zip(&q.density)
            .map(|(a, b)| (a + b) / 2.0)
            .collect(),
        count: p.count + q.count,
    };
    Ok(0.5 * kl_divergence(p, &m)? + 0.5 * kl_divergence(q, &m)?)
}

/// JS divergence between two samples, binned over the pooled min/max of both
/// with `bins` equal-width bins.
pub fn js_from_samples(xs: &[f64], ys: &[f64], bins: usize) -> f64 {
    if xs.is_empty() && ys.is_empty() {
        return 0.0;
    }
    let lo = xs.iter().chain(ys).cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().chain(ys).cloned().fold(f64::NEG_INFINITY, f64::max);
    let p = histogram_in_range(xs, bins, lo, hi);
    let q = histogram_in_range(ys, bins, lo, hi);
    js_divergence(&p, &q).expect("identical edges by construction")
}

/// All matrix entries, flattened row-major.
pub fn edge_weight_values(net: &MobilityNetwork) -> Vec<f64> {
    net.weights.iter().cloned().collect()
}

/// All entries of the weight-distance transform `A / (d_km + 0.8)`, flattened
/// row-major.
pub fn weight_distance_values(net: &MobilityNetwork, dist: &DistanceMatrix) -> Result<Vec<f64>> {
    let t = weight_distance_transform(net, dist, WEIGHT_DISTANCE_EPS)?;
    Ok(t.iter().cloned().collect())
}
