//! Cost scaling of table-level embedding processing against per-statement
//! qualifier aggregation.
//!
//! The lightweight path is `process_embeddings` (layer norm and dropout over
//! the entity and relation tables). The aggregation path computes
//! `h_Q = W Σ φ(R[q_r], E[q_e])` for every statement, once per simulated
//! layer, forward only.

use std::fmt::{self, Write as _};
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{process_embeddings, EmbeddingTables, ModelConfig};
use crate::numerics::{Mode, Tensor};
use crate::rng::{stream, Stream};
use crate::scalar::Scalar;
use crate::store::{KnowledgeGraph, Split, Statement};
use crate::synthetic::RandomGraph;

/// How a qualifier relation and entity vector are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Composition {
    #[default]
    Product,
    Sum,
    /// `(a ⋆ b)_k = Σ_i a_i b_{(i+k) mod d}`, computed directly in `O(d²)`.
    CircularCorrelation,
}

impl Composition {
    fn accumulate<F: Scalar>(self, rel: &[F], ent: &[F], acc: &mut [F]) {
        match self {
            Composition::Product => {
                for ((a, &r), &e) in acc.iter_mut().zip(rel).zip(ent) {
                    *a = *a + r * e;
                }
            }
            Composition::Sum => {
                for ((a, &r), &e) in acc.iter_mut().zip(rel).zip(ent) {
                    *a = *a + r + e;
                }
            }
            Composition::CircularCorrelation => {
                let d = acc.len();
                for (k, a) in acc.iter_mut().enumerate() {
                    let mut s = F::zero();
                    for i in 0..d {
                        s = s + rel[i] * ent[(i + k) % d];
                    }
                    *a = *a + s;
                }
            }
        }
    }
}

impl FromStr for Composition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" | "mult" => Ok(Composition::Product),
            "sum" => Ok(Composition::Sum),
            "circular-correlation" | "corr" => Ok(Composition::CircularCorrelation),
            other => Err(Error::Config(format!(
                "unknown composition '{other}' (expected product, sum or circular-correlation)"
            ))),
        }
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Composition::Product => "product",
            Composition::Sum => "sum",
            Composition::CircularCorrelation => "circular-correlation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModelConfig {
    /// Simulated graph-encoder layers L_g.
    pub layers: usize,
    pub composition: Composition,
    /// Timed repetitions after one discarded warm-up run.
    pub reps: usize,
    pub seed: u64,
}

impl Default for CostModelConfig {
    fn default() -> Self {
        CostModelConfig {
            layers: 2,
            composition: Composition::Product,
            reps: 5,
            seed: 0,
        }
    }
}

impl CostModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 3 {
            return Err(Error::Config(format!(
                "benchmark needs at least 3 repetitions, got {}",
                self.reps
            )));
        }
        if self.layers == 0 {
            return Err(Error::Config("benchmark needs at least one layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lightweight,
    Aggregation,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lightweight => "lightweight",
            Method::Aggregation => "aggregation",
        }
    }
}

/// Median and spread of one measured configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub method: Method,
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_statements: usize,
    pub d: usize,
    pub layers: usize,
    pub reps: usize,
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
}

/// Each sample repeats `run` enough times to cover about 50 ms, so that
/// fast operations are not dominated by timer and scheduler noise.
fn time_reps(reps: usize, mut run: impl FnMut()) -> (f64, f64, f64) {
    let t = Instant::now();
    run();
    let once = t.elapsed().as_secs_f64().max(1e-7);
    let inner = ((0.05 / once).ceil() as usize).clamp(1, 10_000);
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..inner {
                run();
            }
            t.elapsed().as_secs_f64() / inner as f64
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median = if times.len() % 2 == 1 {
        times[mid]
    } else {
        (times[mid - 1] + times[mid]) / 2.0
    };
    (median, times[0], times[times.len() - 1])
}

/// Times train-mode `process_embeddings` on random `N×d` and `M×d` tables.
pub fn bench_lightweight<F: Scalar>(
    graph: &KnowledgeGraph,
    d: usize,
    cfg: &CostModelConfig,
) -> Result<TimingRecord> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, Stream::Bench);
    let tables =
        EmbeddingTables::<F>::random(graph.n_entities(), graph.n_relations(), d, 1.0, &mut rng);
    let model_cfg = ModelConfig {
        d_embed: d,
        ..ModelConfig::default()
    };
    let mut failure = None;
    let (median_s, min_s, max_s) = time_reps(cfg.reps, || {
        if let Err(e) =
            process_embeddings(black_box(&tables), &model_cfg, Mode::Train, &mut rng).map(black_box)
        {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(TimingRecord {
        method: Method::Lightweight,
        n_entities: graph.n_entities(),
        n_relations: graph.n_relations(),
        n_statements: graph.len(),
        d,
        layers: 1,
        reps: cfg.reps,
        median_s,
        min_s,
        max_s,
    })
}

/// `h_Q` for every statement, into `out` (`Z×d`, row-major).
pub fn aggregate_qualifiers<F: Scalar>(
    statements: &[Statement],
    entity: &Tensor<F>,
    relation: &Tensor<F>,
    w: &Tensor<F>,
    composition: Composition,
    out: &mut [F],
) {
    let d = w.cols();
    let mut acc = vec![F::zero(); d];
    for (s, h) in statements.iter().zip(out.chunks_mut(d)) {
        acc.iter_mut().for_each(|a| *a = F::zero());
        for q in &s.qualifiers {
            composition.accumulate(relation.row(q.relation), entity.row(q.entity), &mut acc);
        }
        for (i, hi) in h.iter_mut().enumerate() {
            *hi = crate::numerics::functional::dot(w.row(i), &acc);
        }
    }
}

/// Times `L_g` passes of per-statement qualifier aggregation over the graph.
pub fn bench_qualifier_aggregation<F: Scalar>(
    graph: &KnowledgeGraph,
    d: usize,
    cfg: &CostModelConfig,
) -> Result<TimingRecord> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, Stream::Bench);
    let entity = Tensor::<F>::randn(&[graph.n_entities(), d], 1.0, &mut rng);
    let relation = Tensor::<F>::randn(&[graph.n_relations(), d], 1.0, &mut rng);
    let std = 1.0 / (d as f64).sqrt();
    let weights: Vec<Tensor<F>> = (0..cfg.layers)
        .map(|_| Tensor::randn(&[d, d], std, &mut rng))
        .collect();
    let mut out = vec![F::zero(); graph.len() * d];
    let (median_s, min_s, max_s) = time_reps(cfg.reps, || {
        for w in &weights {
            aggregate_qualifiers(
                graph.statements(),
                &entity,
                &relation,
                w,
                cfg.composition,
                &mut out,
            );
            black_box(&mut out);
        }
    });
    Ok(TimingRecord {
        method: Method::Aggregation,
        n_entities: graph.n_entities(),
        n_relations: graph.n_relations(),
        n_statements: graph.len(),
        d,
        layers: cfg.layers,
        reps: cfg.reps,
        median_s,
        min_s,
        max_s,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Config(
            "a slope fit needs at least two points".into(),
        ));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::Config("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Config(
            "slope fit needs at least two distinct x values".into(),
        ));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Z,
    D,
    N,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Z => "z",
            Axis::D => "d",
            Axis::N => "n",
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "z" => Ok(Axis::Z),
            "d" => Ok(Axis::D),
            "n" => Ok(Axis::N),
            other => Err(Error::Config(format!(
                "unknown sweep axis '{other}' (expected z, d or n)"
            ))),
        }
    }
}

/// Values swept along each axis, with the others held at their base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axes: Vec<(Axis, Vec<usize>)>,
    pub base_z: usize,
    pub base_d: usize,
    pub base_n: usize,
    pub base_m: usize,
    pub max_qualifiers: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            axes: vec![
                (Axis::Z, vec![10_000, 20_000, 40_000]),
                (Axis::D, vec![100, 200, 400]),
            ],
            base_z: 10_000,
            base_d: 200,
            base_n: 5_000,
            base_m: 100,
            max_qualifiers: 4,
        }
    }
}

impl SweepSpec {
    /// Parses `axis=v1,v2,...` and replaces or adds that axis.
    pub fn set_axis(&mut self, text: &str) -> Result<()> {
        let (axis, values) = text.split_once('=').ok_or_else(|| {
            Error::Config(format!("sweep '{text}' is not of the form axis=v1,v2"))
        })?;
        let axis: Axis = axis.trim().parse()?;
        let values = values
            .split(',')
            .map(|v| {
                v.trim().parse::<usize>().map_err(|_| {
                    Error::Config(format!("sweep value '{v}' is not a positive integer"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() || values.contains(&0) {
            return Err(Error::Config(format!(
                "sweep '{text}' needs positive values"
            )));
        }
        self.axes.retain(|(a, _)| *a != axis);
        self.axes.push((axis, values));
        Ok(())
    }
}

/// A fitted exponent for one method along one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub method: Method,
    pub axis: Axis,
    pub slope: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub records: Vec<(Axis, TimingRecord)>,
    pub fits: Vec<Fit>,
}

impl BenchReport {
    /// Fits a slope for every `(method, axis)` with at least two points.
    pub fn from_records(records: Vec<(Axis, TimingRecord)>) -> Result<Self> {
        let mut keys: Vec<(Method, Axis)> = records.iter().map(|(a, r)| (r.method, *a)).collect();
        keys.sort();
        keys.dedup();
        let mut fits = Vec::new();
        for (method, axis) in keys {
            let pts: Vec<&TimingRecord> = records
                .iter()
                .filter(|(a, r)| *a == axis && r.method == method)
                .map(|(_, r)| r)
                .collect();
            if pts.len() < 2 {
                continue;
            }
            let xs: Vec<f64> = pts.iter().map(|r| axis_value(axis, r) as f64).collect();
            let ys: Vec<f64> = pts.iter().map(|r| r.median_s).collect();
            fits.push(Fit {
                method,
                axis,
                slope: loglog_slope(&xs, &ys)?,
                points: pts.len(),
            });
        }
        Ok(BenchReport { records, fits })
    }

    pub fn slope(&self, method: Method, axis: Axis) -> Option<f64> {
        self.fits
            .iter()
            .find(|f| f.method == method && f.axis == axis)
            .map(|f| f.slope)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:<5} {:>8} {:>6} {:>8} {:>6} {:>12} {:>12}",
            "method", "axis", "Z", "d", "N", "M", "median_s", "spread_s"
        );
        for (axis, r) in &self.records {
            let _ = writeln!(
                out,
                "{:<12} {:<5} {:>8} {:>6} {:>8} {:>6} {:>12.6} {:>12.6}",
                r.method.as_str(),
                axis.as_str(),
                r.n_statements,
                r.d,
                r.n_entities,
                r.n_relations,
                r.median_s,
                r.max_s - r.min_s
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<12} {:<5} {:>8}", "method", "axis", "slope");
        for f in &self.fits {
            let _ = writeln!(
                out,
                "{:<12} {:<5} {:>8.3}",
                f.method.as_str(),
                f.axis.as_str(),
                f.slope
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,axis,n_statements,d,n_entities,n_relations,layers,reps,median_s,min_s,max_s\n",
        );
        for (axis, r) in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:.9},{:.9},{:.9}",
                r.method.as_str(),
                axis.as_str(),
                r.n_statements,
                r.d,
                r.n_entities,
                r.n_relations,
                r.layers,
                r.reps,
                r.median_s,
                r.min_s,
                r.max_s
            );
        }
        for f in &self.fits {
            let _ = writeln!(
                out,
                "{},{}-slope,,,,,,,{:.6},,",
                f.method.as_str(),
                f.axis.as_str(),
                f.slope
            );
        }
        out
    }
}

fn axis_value(axis: Axis, r: &TimingRecord) -> usize {
    match axis {
        Axis::Z => r.n_statements,
        Axis::D => r.d,
        Axis::N => r.n_entities,
    }
}

/// A graph with exactly `z` statements drawn from `source`, keeping its
/// vocabularies; statements are sampled with replacement when `z` exceeds
/// the source size.
pub fn resize_graph(source: &KnowledgeGraph, z: usize, seed: u64) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::new(source.entities.clone(), source.relations.clone());
    let all = source.statements();
    let mut rng = stream(seed, Stream::Bench);
    for i in 0..z {
        let s = if z <= all.len() {
            &all[i]
        } else {
            all.choose(&mut rng).expect("source graph is non-empty")
        };
        g.push(s.clone(), Split::Train)
            .expect("ids come from the same vocabulary");
    }
    g
}

/// Runs both methods at every sweep point.
///
/// With a `source` graph, the Z axis resamples its statements and the d axis
/// uses it unchanged. The N axis and runs without a source use random
/// graphs.
pub fn run_sweep<F: Scalar>(
    spec: &SweepSpec,
    cfg: &CostModelConfig,
    source: Option<&KnowledgeGraph>,
    mut progress: impl FnMut(&TimingRecord),
) -> Result<BenchReport> {
    cfg.validate()?;
    if spec.axes.is_empty() || spec.axes.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::Config("sweep lists must be non-empty".into()));
    }
    let synth = |n: usize, z: usize| {
        RandomGraph {
            n_entities: n,
            n_relations: spec.base_m,
            n_statements: z,
            qualified_fraction: 1.0,
            max_qualifiers: spec.max_qualifiers,
            seed: cfg.seed,
        }
        .build()
    };
    let graph_for = |axis: Axis, v: usize| -> KnowledgeGraph {
        match (axis, source) {
            (Axis::Z, Some(g)) => resize_graph(g, v, cfg.seed),
            (Axis::D, Some(g)) => g.clone(),
            (Axis::Z, None) => synth(spec.base_n, v),
            (Axis::D, None) => synth(spec.base_n, spec.base_z),
            (Axis::N, _) => synth(v, spec.base_z),
        }
    };
    // Discarded pass: the first timings of a process run slow.
    let (axis0, values0) = &spec.axes[0];
    let warm = graph_for(*axis0, values0[0]);
    let warm_d = if *axis0 == Axis::D {
        values0[0]
    } else {
        spec.base_d
    };
    let warm_start = Instant::now();
    while warm_start.elapsed().as_secs_f64() < 1.0 {
        bench_lightweight::<F>(&warm, warm_d, cfg)?;
        bench_qualifier_aggregation::<F>(&warm, warm_d, cfg)?;
    }
    let mut records = Vec::new();
    for (axis, values) in &spec.axes {
        for &v in values {
            let graph = graph_for(*axis, v);
            let d = if *axis == Axis::D { v } else { spec.base_d };
            let light = bench_lightweight::<F>(&graph, d, cfg)?;
            progress(&light);
            records.push((*axis, light));
            if *axis != Axis::N {
                let agg = bench_qualifier_aggregation::<F>(&graph, d, cfg)?;
                progress(&agg);
                records.push((*axis, agg));
            }
        }
    }
    BenchReport::from_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Vocabulary;

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() - 1.7).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_err());
        assert!(loglog_slope(&[2.0, 2.0], &[1.0, 3.0]).is_err());
    }

    #[test]
    fn aggregation_matches_direct_formula() {
        let mut rng = stream(1, Stream::Bench);
        let e = Tensor::<f64>::randn(&[4, 3], 1.0, &mut rng);
        let r = Tensor::<f64>::randn(&[2, 3], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[3, 3], 1.0, &mut rng);
        let s = Statement::triple(0, 0, 1).with_qualifiers([(0, 2), (1, 3)]);
        for comp in [
            Composition::Product,
            Composition::Sum,
            Composition::CircularCorrelation,
        ] {
            let mut out = vec![0.0; 3];
            aggregate_qualifiers(std::slice::from_ref(&s), &e, &r, &w, comp, &mut out);
            let phi = |rel: &[f64], ent: &[f64], k: usize| match comp {
                Composition::Product => rel[k] * ent[k],
                Composition::Sum => rel[k] + ent[k],
                Composition::CircularCorrelation => (0..3).map(|i| rel[i] * ent[(i + k) % 3]).sum(),
            };
            let acc: Vec<f64> = (0..3)
                .map(|k| phi(r.row(0), e.row(2), k) + phi(r.row(1), e.row(3), k))
                .collect();
            for i in 0..3 {
                let want: f64 = (0..3).map(|k| w.row(i)[k] * acc[k]).sum();
                assert!((out[i] - want).abs() < 1e-12, "{comp}");
            }
        }
    }

    #[test]
    fn empty_graph_is_fast() {
        let g = KnowledgeGraph::new(Vocabulary::numbered("e", 3), Vocabulary::numbered("r", 1));
        let r = bench_qualifier_aggregation::<f32>(&g, 16, &CostModelConfig::default()).unwrap();
        assert!(r.median_s < 1e-3);
    }

    #[test]
    fn sweep_parsing_and_report() {
        let mut spec = SweepSpec {
            axes: vec![],
            base_z: 50,
            base_d: 8,
            base_n: 20,
            base_m: 3,
            max_qualifiers: 2,
        };
        spec.set_axis("z=50,100").unwrap();
        spec.set_axis("d=8,16").unwrap();
        assert!(spec.set_axis("q=1").is_err());
        assert!(spec.set_axis("z=1,x").is_err());
        let report = run_sweep::<f32>(&spec, &CostModelConfig::default(), None, |_| {}).unwrap();
        assert_eq!(report.records.len(), 8);
        assert_eq!(report.fits.len(), 4);
        assert!(report.to_csv().lines().count() > 8);
        assert!(report.to_table().contains("aggregation"));
    }

    #[test]
    fn resize_keeps_vocabulary() {
        let g = RandomGraph::default().build();
        let big = resize_graph(&g, 500, 0);
        assert_eq!(big.len(), 500);
        assert_eq!(big.n_entities(), g.n_entities());
        assert_eq!(resize_graph(&g, 10, 0).statements(), &g.statements()[..10]);
    }
}
