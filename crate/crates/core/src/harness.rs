//! Realism-evaluation protocol.
//!
//! For each generative model the harness assembles a synthetic set and
//! a mixed set (half real, half synthetic), scores all network pairs
//! within each set under several dissimilarity metrics, and condenses
//! the score distributions into two divergences per metric: `js_m`
//! (mixed vs test) and `js_s` (synthetic vs test). A model whose
//! synthetic networks are indistinguishable from real ones drives both
//! toward zero. Relative improvements against baseline models are
//! reported as signed percentages.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::baselines::derive_seed;
use crate::metrics::{
    cpc, cut_distance, edge_weight_values, histogram_in_range, js_from_samples, rmse,
    weight_distance_values, CutMode, JS_BINS,
};
use crate::net::{DistanceMatrix, MobilityNetwork};
use crate::{Error, Result};

/// Canonical model name the improvement columns compare against.
pub const REFERENCE_MODEL: &str = "mogan";

/// Pairwise dissimilarity channels of the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Rmse,
    Cpc,
    CutDistance,
    WeightsJs,
    WeightDistanceJs,
}

impl MetricName {
    pub const ALL: [MetricName; 5] = [
        MetricName::Rmse,
        MetricName::Cpc,
        MetricName::CutDistance,
        MetricName::WeightsJs,
        MetricName::WeightDistanceJs,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricName::Rmse => "rmse",
            MetricName::Cpc => "cpc",
            MetricName::CutDistance => "cut_distance",
            MetricName::WeightsJs => "weights_js",
            MetricName::WeightDistanceJs => "weight_distance_js",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricName::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown metric name {s:?}")))
    }
}

/// Everything pair scoring may need beyond the two networks.
#[derive(Clone, Copy)]
pub struct MetricContext<'a> {
    /// Tile-to-tile distances, required by the weight-distance channel.
    pub dist: Option<&'a DistanceMatrix>,
    /// How cut distances are evaluated (exact enumeration or SDP bound).
    pub cut_mode: CutMode,
}

impl Default for MetricContext<'_> {
    fn default() -> Self {
        MetricContext { dist: None, cut_mode: CutMode::Sdp { seed: 0 } }
    }
}

/// Scores one pair under one metric. Cut distance reports the certified
/// lower bound in SDP mode.
pub fn pair_score(
    a: &MobilityNetwork,
    b: &MobilityNetwork,
    metric: MetricName,
    ctx: &MetricContext,
) -> Result<f64> {
    match metric {
        MetricName::Rmse => rmse(a, b),
        MetricName::Cpc => cpc(a, b),
        MetricName::CutDistance => Ok(cut_distance(a, b, ctx.cut_mode)?.lower),
        MetricName::WeightsJs => Ok(js_from_samples(
            &edge_weight_values(a),
            &edge_weight_values(b),
            JS_BINS,
        )),
        MetricName::WeightDistanceJs => {
            let dist = ctx.dist.ok_or_else(|| {
                Error::InvalidInput(
                    "weight_distance_js needs a tile distance matrix".into(),
                )
            })?;
            Ok(js_from_samples(
                &weight_distance_values(a, dist)?,
                &weight_distance_values(b, dist)?,
                JS_BINS,
            ))
        }
    }
}

/// One member of a mixed set: an index into either the test set or the
/// synthetic set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedMember {
    pub from_test: bool,
    pub index: usize,
}

/// Draws half the mixed set uniformly (without replacement) from each
/// side and shuffles the combined order. Both sets must share the same
/// even size.
pub fn build_mixed_set(test_len: usize, synthetic_len: usize, seed: u64) -> Result<Vec<MixedMember>> {
    if test_len == 0 || synthetic_len == 0 {
        return Err(Error::InvalidInput("mixed set: both sets must be non-empty".into()));
    }
    if test_len != synthetic_len {
        return Err(Error::InvalidInput(format!(
            "mixed set: sizes differ ({test_len} vs {synthetic_len})"
        )));
    }
    if test_len % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "mixed set: size {test_len} is odd, cannot take half from each side"
        )));
    }
    let half = test_len / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng| {
        let mut idx: Vec<usize> = (0..test_len).collect();
        idx.shuffle(rng);
        idx.truncate(half);
        idx
    };
    let mut members: Vec<MixedMember> = pick(&mut rng)
        .into_iter()
        .map(|index| MixedMember { from_test: true, index })
        .chain(pick(&mut rng).into_iter().map(|index| MixedMember { from_test: false, index }))
        .collect();
    members.shuffle(&mut rng);
    Ok(members)
}

/// Resolves mixed-set members against the two backing sets.
pub fn mixed_networks<'a>(
    test: &'a [MobilityNetwork],
    synthetic: &'a [MobilityNetwork],
    members: &[MixedMember],
) -> Vec<&'a MobilityNetwork> {
    members
        .iter()
        .map(|m| if m.from_test { &test[m.index] } else { &synthetic[m.index] })
        .collect()
}

/// Metric values over all unordered pairs: C(n, 2) scores in
/// lexicographic pair order.
pub fn within_set_scores(
    set: &[&MobilityNetwork],
    metric: MetricName,
    ctx: &MetricContext,
) -> Result<Vec<f64>> {
    if set.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "within-set scores need at least 2 networks, got {}",
            set.len()
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..set.len())
        .flat_map(|i| (i + 1..set.len()).map(move |j| (i, j)))
        .collect();
    pairs
        .par_iter()
        .map(|&(i, j)| pair_score(set[i], set[j], metric, ctx))
        .collect()
}

/// Metric values over every ordered pair (a_i, b_j): |a| * |b| scores
/// in row-major order.
pub fn cross_set_scores(
    a: &[&MobilityNetwork],
    b: &[&MobilityNetwork],
    metric: MetricName,
    ctx: &MetricContext,
) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("cross-set scores need non-empty sets".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..a.len())
        .flat_map(|i| (0..b.len()).map(move |j| (i, j)))
        .collect();
    pairs
        .par_iter()
        .map(|&(i, j)| pair_score(a[i], b[j], metric, ctx))
        .collect()
}

/// Condenses three within-set score lists into the two protocol
/// divergences: `js_m` = JS(mixed, test), `js_s` = JS(synthetic, test).
pub fn distribution_divergences(
    test_scores: &[f64],
    synthetic_scores: &[f64],
    mixed_scores: &[f64],
) -> (f64, f64) {
    let js_m = js_from_samples(mixed_scores, test_scores, JS_BINS);
    let js_s = js_from_samples(synthetic_scores, test_scores, JS_BINS);
    (js_m, js_s)
}

/// Signed percentage improvement of the reference model over a
/// baseline: positive when the reference divergence is smaller.
pub fn relative_improvement(js_reference: f64, js_baseline: f64) -> Result<f64> {
    if !(js_baseline > 0.0) {
        return Err(Error::Numeric(format!(
            "relative improvement undefined for baseline divergence {js_baseline}"
        )));
    }
    Ok(-((js_reference - js_baseline) / js_baseline) * 100.0)
}

/// JS divergence pair for one (model, metric) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub model: String,
    pub metric: MetricName,
    pub js_m: f64,
    pub js_s: f64,
}

impl ReportEntry {
    fn new(model: &str, metric: MetricName, js_m: f64, js_s: f64) -> Self {
        ReportEntry { model: model.to_string(), metric, js_m, js_s }
    }
}

/// Improvement of the reference model over one baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEntry {
    pub baseline: String,
    pub metric: MetricName,
    pub delta_m: Option<f64>,
    pub delta_s: Option<f64>,
}

/// Divergence table plus improvement columns, with the seeds that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub root_seed: u64,
    pub models: Vec<String>,
    pub metrics: Vec<MetricName>,
    pub entries: Vec<ReportEntry>,
    pub deltas: Vec<DeltaEntry>,
}

/// Raw per-model evaluation products kept alongside the report.
pub struct ModelEvaluation {
    pub name: String,
    pub mixed_members: Vec<MixedMember>,
    pub mixed_seed: u64,
    /// Within-synthetic-set score list per metric.
    pub synthetic_scores: BTreeMap<MetricName, Vec<f64>>,
    /// Within-mixed-set score list per metric.
    pub mixed_scores: BTreeMap<MetricName, Vec<f64>>,
    /// Synthetic-vs-test ordered-pair scores per metric (auxiliary
    /// channel; the report tables use the within-set lists).
    pub cross_scores: BTreeMap<MetricName, Vec<f64>>,
}

/// Full output of [`run_protocol`].
pub struct ProtocolResult {
    pub report: DivergenceReport,
    pub test_scores: BTreeMap<MetricName, Vec<f64>>,
    pub models: Vec<ModelEvaluation>,
}

/// Runs the whole sweep: per model, build the mixed set, compute all
/// within-set, mixed and cross score lists for every metric, then the
/// JS table and improvement columns. Deterministic given `root_seed`.
pub fn run_protocol(
    test: &[MobilityNetwork],
    sources: &[(String, Vec<MobilityNetwork>)],
    metrics: &[MetricName],
    ctx: &MetricContext,
    root_seed: u64,
) -> Result<ProtocolResult> {
    if sources.is_empty() {
        return Err(Error::InvalidInput("protocol needs at least one synthetic source".into()));
    }
    if metrics.is_empty() {
        return Err(Error::InvalidInput("protocol needs at least one metric".into()));
    }
    let test_refs: Vec<&MobilityNetwork> = test.iter().collect();
    let mut test_scores = BTreeMap::new();
    for &metric in metrics {
        test_scores.insert(metric, within_set_scores(&test_refs, metric, ctx)?);
    }

    let mut models = Vec::with_capacity(sources.len());
    let mut entries = Vec::new();
    for (name, synthetic) in sources {
        if synthetic.len() != test.len() {
            return Err(Error::InvalidInput(format!(
                "model {name}: synthetic set has {} networks, test set {}",
                synthetic.len(),
                test.len()
            )));
        }
        let mixed_seed = derive_seed(root_seed, &format!("mixed:{name}"));
        let members = build_mixed_set(test.len(), synthetic.len(), mixed_seed)?;
        let synth_refs: Vec<&MobilityNetwork> = synthetic.iter().collect();
        let mixed_refs = mixed_networks(test, synthetic, &members);

        let mut synthetic_scores = BTreeMap::new();
        let mut mixed_scores = BTreeMap::new();
        let mut cross_scores = BTreeMap::new();
        for &metric in metrics {
            let s = within_set_scores(&synth_refs, metric, ctx)?;
            let m = within_set_scores(&mixed_refs, metric, ctx)?;
            let x = cross_set_scores(&synth_refs, &test_refs, metric, ctx)?;
            let (js_m, js_s) = distribution_divergences(&test_scores[&metric], &s, &m);
            entries.push(ReportEntry::new(name, metric, js_m, js_s));
            synthetic_scores.insert(metric, s);
            mixed_scores.insert(metric, m);
            cross_scores.insert(metric, x);
        }
        models.push(ModelEvaluation {
            name: name.clone(),
            mixed_members: members,
            mixed_seed,
            synthetic_scores,
            mixed_scores,
            cross_scores,
        });
    }

    let deltas = improvement_columns(&entries, metrics, sources)?;
    let report = DivergenceReport {
        root_seed,
        models: sources.iter().map(|(n, _)| n.clone()).collect(),
        metrics: metrics.to_vec(),
        entries,
        deltas,
    };
    Ok(ProtocolResult { report, test_scores, models })
}

fn improvement_columns(
    entries: &[ReportEntry],
    metrics: &[MetricName],
    sources: &[(String, Vec<MobilityNetwork>)],
) -> Result<Vec<DeltaEntry>> {
    let mut deltas = Vec::new();
    let has_reference = sources.iter().any(|(n, _)| n == REFERENCE_MODEL);
    if !has_reference {
        return Ok(deltas);
    }
    let lookup = |model: &str, metric: MetricName| {
        entries
            .iter()
            .find(|e| e.model == model && e.metric == metric)
            .expect("entry exists for every (model, metric)")
    };
    for (name, _) in sources {
        if name == REFERENCE_MODEL {
            continue;
        }
        for &metric in metrics {
            let reference = lookup(REFERENCE_MODEL, metric);
            let baseline = lookup(name, metric);
            deltas.push(DeltaEntry {
                baseline: name.clone(),
                metric,
                delta_m: relative_improvement(reference.js_m, baseline.js_m).ok(),
                delta_s: relative_improvement(reference.js_s, baseline.js_s).ok(),
            });
        }
    }
    Ok(deltas)
}

fn write_scores_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = String::with_capacity(values.len() * 24 + 8);
    out.push_str("value\n");
    for v in values {
        out.push_str(&format!("{v:.17e}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_scores_csv(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "value" {
                return Err(Error::parse(path, 1, format!("expected header 'value', got {line:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        values.push(
            line.parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad number {line:?}")))?,
        );
    }
    Ok(values)
}

/// Writes `report.json` and the flat `report_table.csv` under `dir`.
pub fn save_report(report: &DivergenceReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report_path = dir.join("report.json");
    let json =
        serde_json::to_string_pretty(report).map_err(|e| Error::Numeric(e.to_string()))?;
    std::fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e))?;
    write_report_table(report, &dir.join("report_table.csv"))
}

/// Writes the report JSON, the flat table CSV, raw score lists (one CSV
/// per model, metric and set), plot-ready histogram CSVs, and the mixed
/// set compositions under `dir`.
pub fn save_artifacts(result: &ProtocolResult, dir: &Path) -> Result<()> {
    let scores_dir = dir.join("scores");
    let hist_dir = dir.join("histograms");
    for d in [dir, &scores_dir, &hist_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    save_report(&result.report, dir)?;

    for (&metric, values) in &result.test_scores {
        write_scores_csv(&scores_dir.join(format!("test_{metric}.csv")), values)?;
    }
    for model in &result.models {
        for (&metric, values) in &model.synthetic_scores {
            write_scores_csv(
                &scores_dir.join(format!("synthetic_{}_{metric}.csv", model.name)),
                values,
            )?;
        }
        for (&metric, values) in &model.mixed_scores {
            write_scores_csv(&scores_dir.join(format!("mixed_{}_{metric}.csv", model.name)), values)?;
        }
        for (&metric, values) in &model.cross_scores {
            write_scores_csv(&scores_dir.join(format!("cross_{}_{metric}.csv", model.name)), values)?;
        }
        let mix_path = dir.join(format!("mixed_members_{}.csv", model.name));
        let mut out = String::from("source,index\n");
        for m in &model.mixed_members {
            out.push_str(&format!(
                "{},{}\n",
                if m.from_test { "test" } else { "synthetic" },
                m.index
            ));
        }
        std::fs::write(&mix_path, out).map_err(|e| Error::io(&mix_path, e))?;

        for (&metric, synth) in &model.synthetic_scores {
            let test = &result.test_scores[&metric];
            let mixed = &model.mixed_scores[&metric];
            write_histograms(
                &hist_dir.join(format!("{}_{metric}.csv", model.name)),
                test,
                synth,
                mixed,
            )?;
        }
    }
    Ok(())
}

/// Shared-range 100-bin histograms of the three score distributions,
/// as plot-ready CSV. The JS table itself pools ranges pairwise, so
/// these densities are for figures, not for recomputing divergences.
fn write_histograms(path: &Path, test: &[f64], synthetic: &[f64], mixed: &[f64]) -> Result<()> {
    let all = test.iter().chain(synthetic).chain(mixed);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in all {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    let ht = histogram_in_range(test, JS_BINS, lo, hi);
    let hs = histogram_in_range(synthetic, JS_BINS, lo, hi);
    let hm = histogram_in_range(mixed, JS_BINS, lo, hi);
    let mut out = String::from("bin_lo,bin_hi,test_density,synthetic_density,mixed_density\n");
    for b in 0..JS_BINS {
        out.push_str(&format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            ht.edges[b],
            ht.edges[b + 1],
            ht.density[b],
            hs.density[b],
            hm.density[b]
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_report_table(report: &DivergenceReport, path: &Path) -> Result<()> {
    let baselines: Vec<&String> =
        report.models.iter().filter(|m| m.as_str() != REFERENCE_MODEL).collect();
    let mut header = String::from("metric,js_m,js_s");
    for b in &baselines {
        header.push_str(&format!(",{b}_js_m,{b}_js_s,delta_m_{b},delta_s_{b}"));
    }
    header.push('\n');
    let mut out = header;
    let find = |model: &str, metric: MetricName| {
        report.entries.iter().find(|e| e.model == model && e.metric == metric)
    };
    let fmt_opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for &metric in &report.metrics {
        let reference = find(REFERENCE_MODEL, metric);
        let (js_m, js_s) = reference.map_or((String::new(), String::new()), |e| {
            (format!("{:.6}", e.js_m), format!("{:.6}", e.js_s))
        });
        out.push_str(&format!("{metric},{js_m},{js_s}"));
        for b in &baselines {
            let entry = find(b, metric);
            let (bm, bs) = entry.map_or((String::new(), String::new()), |e| {
                (format!("{:.6}", e.js_m), format!("{:.6}", e.js_s))
            });
            let delta = report
                .deltas
                .iter()
                .find(|d| &d.baseline == *b && d.metric == metric);
            let (dm, ds) = delta.map_or((String::new(), String::new()), |d| {
                (fmt_opt(d.delta_m), fmt_opt(d.delta_s))
            });
            out.push_str(&format!(",{bm},{bs},{dm},{ds}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Recomputes the JS table and improvement columns from the raw score
/// CSVs emitted by [`save_artifacts`]; byte-identical inputs give
/// identical values.
pub fn regenerate_report(dir: &Path) -> Result<DivergenceReport> {
    let report_path = dir.join("report.json");
    let raw = std::fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
    let persisted: DivergenceReport =
        serde_json::from_str(&raw).map_err(|e| Error::parse(&report_path, 0, e.to_string()))?;

    let scores_dir = dir.join("scores");
    let mut entries = Vec::new();
    for model in &persisted.models {
        for &metric in &persisted.metrics {
            let test = read_scores_csv(&scores_dir.join(format!("test_{metric}.csv")))?;
            let synth =
                read_scores_csv(&scores_dir.join(format!("synthetic_{model}_{metric}.csv")))?;
            let mixed = read_scores_csv(&scores_dir.join(format!("mixed_{model}_{metric}.csv")))?;
            let (js_m, js_s) = distribution_divergences(&test, &synth, &mixed);
            entries.push(ReportEntry::new(model, metric, js_m, js_s));
        }
    }
    let sources: Vec<(String, Vec<MobilityNetwork>)> =
        persisted.models.iter().map(|m| (m.clone(), Vec::new())).collect();
    let deltas = improvement_columns(&entries, &persisted.metrics, &sources)?;
    Ok(DivergenceReport {
        root_seed: persisted.root_seed,
        models: persisted.models,
        metrics: persisted.metrics,
        entries,
        deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_grid_tessellation, distance_matrix, BBox};
    use ndarray::Array2;
    use rand::Rng;
    use tempfile::tempdir;

    fn nets(count: usize, n: usize, seed: u64, tag: &str) -> Vec<MobilityNetwork> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let w = Array2::from_shape_simple_fn((n, n), || {
                    rng.random_range(0.0f64..20.0).floor()
                });
                MobilityNetwork::new(format!("{tag}-{i:03}"), w).unwrap()
            })
            .collect()
    }

    fn small_dist(n_rows: usize, n_cols: usize) -> DistanceMatrix {
        let bbox = BBox::new(-74.05, 40.71, -73.88, 40.85);
        let tess = build_grid_tessellation(bbox, n_rows, n_cols).unwrap();
        distance_matrix(&tess)
    }

    #[test]
    fn metric_names_roundtrip_through_strings() {
        for m in MetricName::ALL {
            assert_eq!(m.as_str().parse::<MetricName>().unwrap(), m);
        }
        assert!("frobnitz".parse::<MetricName>().is_err());
    }

    #[test]
    fn mixed_set_takes_exactly_half_from_each_side() {
        let members = build_mixed_set(146, 146, 9).unwrap();
        assert_eq!(members.len(), 146);
        let from_test = members.iter().filter(|m| m.from_test).count();
        assert_eq!(from_test, 73);
        assert_eq!(members.len() - from_test, 73);
        // Without replacement on each side.
        let mut test_idx: Vec<usize> =
            members.iter().filter(|m| m.from_test).map(|m| m.index).collect();
        test_idx.sort_unstable();
        test_idx.dedup();
        assert_eq!(test_idx.len(), 73);
    }

    #[test]
    fn mixed_set_is_deterministic_in_the_seed() {
        assert_eq!(build_mixed_set(10, 10, 4).unwrap(), build_mixed_set(10, 10, 4).unwrap());
        assert_ne!(build_mixed_set(10, 10, 4).unwrap(), build_mixed_set(10, 10, 5).unwrap());
    }

    #[test]
    fn mixed_set_rejects_bad_sizes() {
        assert!(build_mixed_set(0, 0, 1).is_err());
        assert!(build_mixed_set(7, 7, 1).is_err());
        assert!(build_mixed_set(8, 6, 1).is_err());
    }

    #[test]
    fn within_set_count_matches_binomial_coefficient() {
        let set = nets(8, 6, 1, "t");
        let refs: Vec<&MobilityNetwork> = set.iter().collect();
        let scores = within_set_scores(&refs, MetricName::Rmse, &MetricContext::default()).unwrap();
        assert_eq!(scores.len(), 28);
        let two: Vec<&MobilityNetwork> = set[..2].iter().collect();
        assert_eq!(
            within_set_scores(&two, MetricName::Rmse, &MetricContext::default())
                .unwrap()
                .len(),
            1
        );
        let one: Vec<&MobilityNetwork> = set[..1].iter().collect();
        assert!(within_set_scores(&one, MetricName::Rmse, &MetricContext::default()).is_err());
    }

    #[test]
    fn identical_networks_have_zero_rmse_everywhere() {
        let base = nets(1, 6, 2, "t").remove(0);
        let copies: Vec<MobilityNetwork> = (0..4)
            .map(|i| MobilityNetwork::new(format!("c{i}"), base.weights.clone()).unwrap())
            .collect();
        let refs: Vec<&MobilityNetwork> = copies.iter().collect();
        let scores = within_set_scores(&refs, MetricName::Rmse, &MetricContext::default()).unwrap();
        assert!(scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn cross_set_counts_and_cpc_diagonal() {
        let set = nets(5, 6, 3, "t");
        let refs: Vec<&MobilityNetwork> = set.iter().collect();
        let scores =
            cross_set_scores(&refs, &refs, MetricName::Cpc, &MetricContext::default()).unwrap();
        assert_eq!(scores.len(), 25);
        for i in 0..5 {
            assert!((scores[i * 5 + i] - 1.0).abs() < 1e-15);
        }
        let single = vec![refs[0]];
        let one =
            cross_set_scores(&single, &single, MetricName::Rmse, &MetricContext::default()).unwrap();
        assert_eq!(one, vec![0.0]);
    }

    #[test]
    fn self_test_gives_zero_divergence() {
        let scores = vec![0.5, 1.0, 2.0, 4.0];
        let (js_m, js_s) = distribution_divergences(&scores, &scores, &scores);
        assert_eq!(js_s, 0.0);
        assert_eq!(js_m, 0.0);
    }

    #[test]
    fn disjoint_scores_reach_the_analytic_maximum() {
        let a = vec![0.0, 0.1, 0.2, 0.3];
        let b = vec![10.0, 10.1, 10.2, 10.3];
        let (_, js_s) = distribution_divergences(&a, &b, &a);
        assert!((js_s - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn relative_improvement_matches_hand_values() {
        assert!((relative_improvement(0.05, 0.10).unwrap() - 50.0).abs() < 1e-12);
        assert!((relative_improvement(0.10, 0.05).unwrap() + 100.0).abs() < 1e-12);
        let wide_gap = relative_improvement(0.06, 0.46).unwrap();
        assert!((wide_gap - 86.956_521_739_130_43).abs() < 1e-9);
        assert!(relative_improvement(0.1, 0.0).is_err());
    }

    fn protocol_fixture() -> (Vec<MobilityNetwork>, Vec<(String, Vec<MobilityNetwork>)>, DistanceMatrix)
    {
        let test = nets(6, 8, 10, "test");
        let mogan = nets(6, 8, 11, "m");
        let gravity = nets(6, 8, 12, "g");
        let dist = small_dist(2, 4);
        (test, vec![("mogan".into(), mogan), ("gravity".into(), gravity)], dist)
    }

    #[test]
    fn protocol_produces_the_full_cartesian_sweep() {
        let (test, sources, dist) = protocol_fixture();
        let ctx = MetricContext { dist: Some(&dist), cut_mode: CutMode::Exact };
        let result = run_protocol(&test, &sources, &MetricName::ALL, &ctx, 77).unwrap();
        assert_eq!(result.report.entries.len(), 2 * 5);
        assert_eq!(result.report.deltas.len(), 5);
        for model in &result.models {
            for &metric in &MetricName::ALL {
                assert_eq!(model.synthetic_scores[&metric].len(), 15);
                assert_eq!(model.mixed_scores[&metric].len(), 15);
                assert_eq!(model.cross_scores[&metric].len(), 36);
            }
            let from_test = model.mixed_members.iter().filter(|m| m.from_test).count();
            assert_eq!(from_test, 3);
        }
        let again = run_protocol(&test, &sources, &MetricName::ALL, &ctx, 77).unwrap();
        assert_eq!(result.report, again.report);
    }

    #[test]
    fn self_test_mode_degenerates_and_wins_every_delta() {
        let test = nets(6, 8, 20, "test");
        let clones: Vec<MobilityNetwork> = test
            .iter()
            .map(|n| MobilityNetwork::new(format!("s-{}", n.date), n.weights.clone()).unwrap())
            .collect();
        let gravity = nets(6, 8, 21, "g");
        let sources = vec![("mogan".to_string(), clones), ("gravity".to_string(), gravity)];
        let dist = small_dist(2, 4);
        let ctx = MetricContext { dist: Some(&dist), cut_mode: CutMode::Exact };
        let result = run_protocol(&test, &sources, &MetricName::ALL, &ctx, 5).unwrap();
        for entry in result.report.entries.iter().filter(|e| e.model == "mogan") {
            assert_eq!(entry.js_s, 0.0, "metric {}", entry.metric);
        }
        for delta in &result.report.deltas {
            let baseline = result
                .report
                .entries
                .iter()
                .find(|e| e.model == delta.baseline && e.metric == delta.metric)
                .unwrap();
            if baseline.js_s > 0.0 {
                assert!((delta.delta_s.unwrap() - 100.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn artifacts_roundtrip_regenerates_identical_reports() {
        let (test, sources, dist) = protocol_fixture();
        let ctx = MetricContext { dist: Some(&dist), cut_mode: CutMode::Exact };
        let result =
            run_protocol(&test, &sources, &[MetricName::Rmse, MetricName::Cpc], &ctx, 31).unwrap();
        let dir = tempdir().unwrap();
        save_artifacts(&result, dir.path()).unwrap();
        assert!(dir.path().join("report.json").exists());
        assert!(dir.path().join("report_table.csv").exists());
        assert!(dir.path().join("scores/test_rmse.csv").exists());
        assert!(dir.path().join("scores/cross_mogan_cpc.csv").exists());
        assert!(dir.path().join("histograms/gravity_rmse.csv").exists());
        let regenerated = regenerate_report(dir.path()).unwrap();
        assert_eq!(regenerated, result.report);
    }

    #[test]
    fn weight_distance_metric_requires_distances() {
        let set = nets(3, 8, 30, "t");
        let refs: Vec<&MobilityNetwork> = set.iter().collect();
        let err =
            within_set_scores(&refs, MetricName::WeightDistanceJs, &MetricContext::default());
        assert!(err.is_err());
    }

    #[test]
    fn mixed_partition_sizes_follow_the_protocol_arithmetic() {
        // 146 networks -> C(146,2) pairs split into real-real,
        // synth-synth and real-synth blocks.
        let members = build_mixed_set(146, 146, 3).unwrap();
        let real = members.iter().filter(|m| m.from_test).count();
        let synth = members.len() - real;
        let pairs = members.len() * (members.len() - 1) / 2;
        let real_real = real * (real - 1) / 2;
        let synth_synth = synth * (synth - 1) / 2;
        assert_eq!(pairs, 10_585);
        assert_eq!(real_real + synth_synth + real * synth, pairs);
        assert_eq!(real_real, 2_628);
        assert_eq!(synth_synth, 2_628);
        assert_eq!(real * synth, 5_329);
    }
}
