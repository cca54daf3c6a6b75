//! Experiment harness: dataset building, method-matrix evaluation, gap
//! metrics, ablations, sampling/penalty/density/distribution studies, and
//! CSV output.
//!
//! Every run is a pure function of (instances, config, seeds): per-instance
//! RNG streams are derived from the master seed and the instance index, so
//! parallel and serial execution produce identical records. Timing columns
//! are the one physical exception; [`TimingMode::Zero`] suppresses them for
//! byte-identical reruns.

use std::fmt;
use std::path::{Path as FsPath, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::exact::{
    bellman_ford_to_sink, brute_force_solve, labeling_solve, BellmanFordOutcome, ExactError,
    SolveLimits,
};
use crate::graph::{
    generate, read_graph, write_graph, GenerateError, GeneratorSpec, Graph, GraphIoError,
    WeightDistribution,
};
use crate::loss::{self, LossToggles, PenaltyPreset};
use crate::model::EdgeProbabilities;
use crate::rng::derive_seed;
use crate::search::{beam_search, randomized_decode, sample_walk_decode, DecodeConfig, DecodeMode};
use crate::solver::{optimize, solve_espp_with_beam, SolverConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    GraphIo(#[from] GraphIoError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error("method list must not be empty")]
    EmptyMethods,
    #[error("dataset split directory {0} does not exist")]
    MissingSplit(PathBuf),
}

/// Solver roster for experiment matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Full learned configuration (all loss terms), elementary decoding.
    EsppNnaa,
    /// Alignment-only variant: negative-cycle penalty toggled off.
    EsppAa,
    /// Baseline loss only (objective + flow + Phi), elementary decoding.
    EsppNn,
    /// Full training, decoding without the visited-set restriction.
    SppNoElem,
    Beam,
    Randomized,
    Labeling,
    BellmanFord,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::EsppNnaa,
        Method::EsppAa,
        Method::EsppNn,
        Method::SppNoElem,
        Method::Beam,
        Method::Randomized,
        Method::Labeling,
        Method::BellmanFord,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::EsppNnaa => "espp-nnaa",
            Method::EsppAa => "espp-aa",
            Method::EsppNn => "espp-nn",
            Method::SppNoElem => "spp-noelem",
            Method::Beam => "beam",
            Method::Randomized => "randomized",
            Method::Labeling => "labeling",
            Method::BellmanFord => "bellman-ford",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.tag() == s)
    }

    fn salt(self) -> u64 {
        Method::ALL.iter().position(|&m| m == self).unwrap() as u64 + 1
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Wall-clock columns are either measured or written as zero (reproducibility
/// checks compare CSV bytes, and timing is not a function of the seeds).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimingMode {
    Wall,
    Zero,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub n_samples: usize,
    pub beam_width: usize,
    pub preset: PenaltyPreset,
    pub labeling_limits: SolveLimits,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub timing: TimingMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_samples: 100,
            beam_width: crate::search::DEFAULT_BEAM_WIDTH,
            preset: PenaltyPreset::Medium,
            labeling_limits: SolveLimits::default(),
            seed: 0,
            jobs: None,
            timing: TimingMode::Wall,
        }
    }
}

/// One (instance, method) evaluation row.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub instance: String,
    pub method: String,
    pub cost: f64,
    pub gap_percent: f64,
    /// Set when the beam cost was zero and the gap fell back to an absolute
    /// difference.
    pub gap_absolute_fallback: bool,
    pub feasible: bool,
    pub wall_time_s: f64,
    pub samples_used: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub mean_gap: f64,
    pub std_gap: f64,
    pub mean_time: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<ExperimentRecord>,
    pub summaries: Vec<MethodSummary>,
}

/// Signed percentage gap versus the beam cost; negative is better than beam.
/// A zero beam cost falls back to the absolute difference times 100.
pub fn gap_percent(cost: f64, beam_cost: f64) -> f64 {
    if beam_cost == 0.0 {
        100.0 * (cost - beam_cost)
    } else {
        100.0 * (cost - beam_cost) / beam_cost.abs()
    }
}

pub fn gap_uses_absolute_fallback(beam_cost: f64) -> bool {
    beam_cost == 0.0
}

/// Mean binary entropy (nats) of the edge probabilities; 0 at saturation.
pub fn mean_edge_entropy(p: &EdgeProbabilities) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    let total: f64 = p
        .as_slice()
        .iter()
        .map(|&x| {
            let mut h = 0.0;
            if x > 0.0 && x < 1.0 {
                h -= x * x.ln() + (1.0 - x) * (1.0 - x).ln();
            }
            h
        })
        .sum();
    total / p.len() as f64
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64;
    (mean, var.sqrt())
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let mid = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[mid]
    } else {
        0.5 * (xs[mid - 1] + xs[mid])
    }
}

fn with_pool<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

/// Ordered parallel map over instances.
fn par_map_instances<T: Send>(
    jobs: Option<usize>,
    instances: &[(String, Graph)],
    f: impl Fn(usize, &str, &Graph) -> T + Sync,
) -> Vec<T> {
    with_pool(jobs, || {
        instances
            .par_iter()
            .enumerate()
            .map(|(idx, (id, g))| f(idx, id, g))
            .collect()
    })
}

/// Learned-method solver configuration for one instance.
fn learned_config(g: &Graph, cfg: &ExperimentConfig, method: Method, instance_seed: u64) -> SolverConfig {
    let mut sc = SolverConfig::defaults_for(g);
    sc.loss = sc.loss.with_preset(cfg.preset);
    sc.seed = derive_seed(instance_seed, method.salt());
    match method {
        Method::EsppNnaa | Method::SppNoElem => {}
        Method::EsppAa => sc.loss.toggles.phi = false,
        Method::EsppNn => sc.loss.toggles = LossToggles::baseline(),
        _ => unreachable!("not a learned method"),
    }
    sc
}

fn evaluate_instance(
    idx: usize,
    id: &str,
    g: &Graph,
    methods: &[Method],
    cfg: &ExperimentConfig,
) -> Vec<ExperimentRecord> {
    let instance_seed = derive_seed(cfg.seed, idx as u64);
    let beam = beam_search(g, cfg.beam_width);
    let beam_cost = beam.as_ref().map_or(f64::NAN, |b| b.cost);
    let beam_time = beam.as_ref().map_or(0.0, |b| b.wall_time.as_secs_f64());

    methods
        .iter()
        .map(|&method| {
            let (cost, feasible, time_s, samples) = match method {
                Method::Beam => match &beam {
                    Ok(b) => (b.cost, true, b.wall_time.as_secs_f64(), 0),
                    Err(_) => (f64::INFINITY, false, 0.0, 0),
                },
                Method::Randomized => {
                    let dc = DecodeConfig {
                        n_trials: cfg.n_samples,
                        max_steps: g.node_count(),
                        seed: derive_seed(instance_seed, method.salt()),
                        mode: DecodeMode::Sample,
                    };
                    let r = randomized_decode(g, &dc);
                    (r.cost, r.feasible, r.wall_time.as_secs_f64(), r.samples_used)
                }
                Method::Labeling => match labeling_solve(g, &cfg.labeling_limits) {
                    Ok(r) => (
                        r.optimum.unwrap_or(f64::INFINITY),
                        r.path.is_some(),
                        r.wall_time.as_secs_f64(),
                        0,
                    ),
                    Err(_) => (f64::INFINITY, false, 0.0, 0),
                },
                Method::BellmanFord => {
                    let t0 = Instant::now();
                    let outcome = bellman_ford_to_sink(g, g.node_count());
                    let elapsed = t0.elapsed().as_secs_f64();
                    match outcome {
                        BellmanFordOutcome::Converged(d) => {
                            let c = d.value(g.source());
                            (c, c.is_finite(), elapsed, 0)
                        }
                        BellmanFordOutcome::NegativeCycle { .. } => {
                            (f64::INFINITY, false, elapsed, 0)
                        }
                    }
                }
                Method::EsppNnaa | Method::EsppAa | Method::EsppNn => {
                    let sc = learned_config(g, cfg, method, instance_seed);
                    match solve_espp_with_beam(
                        g,
                        &sc,
                        cfg.n_samples,
                        beam.as_ref().ok().cloned(),
                        method.tag(),
                    ) {
                        Ok(out) => (
                            out.result.cost,
                            out.result.feasible,
                            out.result.wall_time.as_secs_f64() + beam_time,
                            out.result.samples_used,
                        ),
                        Err(_) => (f64::INFINITY, false, 0.0, cfg.n_samples as u64),
                    }
                }
                Method::SppNoElem => {
                    let mut sc = learned_config(g, cfg, method, instance_seed);
                    sc.loss.advantage_reference = if beam_cost.is_finite() { beam_cost } else { 0.0 };
                    let t0 = Instant::now();
                    match optimize(g, &sc) {
                        Ok(trace) => {
                            let dc = DecodeConfig {
                                n_trials: cfg.n_samples,
                                max_steps: g.node_count(),
                                seed: derive_seed(sc.seed, 0x77),
                                mode: DecodeMode::Sample,
                            };
                            let r = sample_walk_decode(g, &trace.final_probs, &dc);
                            (r.cost, r.feasible, t0.elapsed().as_secs_f64(), r.samples_used)
                        }
                        Err(_) => (f64::INFINITY, false, 0.0, cfg.n_samples as u64),
                    }
                }
            };
            ExperimentRecord {
                instance: id.to_string(),
                method: method.tag().to_string(),
                cost,
                gap_percent: gap_percent(cost, beam_cost),
                gap_absolute_fallback: gap_uses_absolute_fallback(beam_cost),
                feasible,
                wall_time_s: match cfg.timing {
                    TimingMode::Wall => time_s,
                    TimingMode::Zero => 0.0,
                },
                samples_used: samples,
            }
        })
        .collect()
}

fn summarize(methods: &[Method], records: &[ExperimentRecord]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|m| {
            let rows: Vec<&ExperimentRecord> =
                records.iter().filter(|r| r.method == m.tag()).collect();
            let gaps: Vec<f64> = rows
                .iter()
                .map(|r| r.gap_percent)
                .filter(|g| g.is_finite())
                .collect();
            let (mean_gap, std_gap) = mean_std(&gaps);
            let times: Vec<f64> = rows.iter().map(|r| r.wall_time_s).collect();
            let (mean_time, _) = mean_std(&times);
            MethodSummary {
                method: m.tag().to_string(),
                mean_gap,
                std_gap,
                mean_time,
            }
        })
        .collect()
}

/// Instances are evaluated in parallel chunks; completed chunks stream to
/// `on_rows` in instance order, so a partially written CSV is always a
/// parseable prefix.
pub fn run_cell_streaming(
    instances: &[(String, Graph)],
    methods: &[Method],
    cfg: &ExperimentConfig,
    mut on_rows: impl FnMut(&[ExperimentRecord]) + Send,
) -> Result<ExperimentOutcome, HarnessError> {
    if methods.is_empty() {
        return Err(HarnessError::EmptyMethods);
    }
    const CHUNK: usize = 8;
    let records = with_pool(cfg.jobs, || {
        let mut all: Vec<ExperimentRecord> = Vec::with_capacity(instances.len() * methods.len());
        for (chunk_idx, chunk) in instances.chunks(CHUNK).enumerate() {
            let rows: Vec<Vec<ExperimentRecord>> = chunk
                .par_iter()
                .enumerate()
                .map(|(i, (id, g))| {
                    evaluate_instance(chunk_idx * CHUNK + i, id, g, methods, cfg)
                })
                .collect();
            for r in rows {
                on_rows(&r);
                all.extend(r);
            }
        }
        all
    });
    let summaries = summarize(methods, &records);
    Ok(ExperimentOutcome { records, summaries })
}

/// Evaluates every method on every instance of an in-memory cell.
pub fn run_cell(
    instances: &[(String, Graph)],
    methods: &[Method],
    cfg: &ExperimentConfig,
) -> Result<ExperimentOutcome, HarnessError> {
    run_cell_streaming(instances, methods, cfg, |_| {})
}

/// Evaluates the method matrix on the test split of a dataset directory.
pub fn run_experiment(
    dataset: &FsPath,
    methods: &[Method],
    cfg: &ExperimentConfig,
) -> Result<ExperimentOutcome, HarnessError> {
    let instances = load_split(dataset, "test")?;
    run_cell(&instances, methods, cfg)
}

// ---------------------------------------------------------------------------
// Studies
// ---------------------------------------------------------------------------

/// Reference solver for study gaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapReference {
    Beam,
    BruteForce,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingCell {
    pub n_samples: usize,
    pub mean_gap: f64,
    pub std_gap: f64,
    pub mean_time: f64,
    /// Fraction of instances whose decoded cost matched the reference within
    /// 1e-9.
    pub ref_match_rate: f64,
}

/// Trains once per instance, then decodes with each sample budget in the
/// grid. Per-trial RNG streams are indexed by trial, so budgets are nested
/// prefixes of one stream and the best-of cost is monotone in the budget.
pub fn sampling_study(
    instances: &[(String, Graph)],
    n_grid: &[usize],
    reference: GapReference,
    cfg: &ExperimentConfig,
) -> Result<Vec<SamplingCell>, HarnessError> {
    assert!(!n_grid.is_empty(), "empty sampling grid");
    type Row = Vec<(f64, f64, bool)>;
    let per_instance: Vec<Result<Row, ExactError>> =
        par_map_instances(cfg.jobs, instances, |idx, _id, g| {
            let instance_seed = derive_seed(cfg.seed, idx as u64);
            let beam = beam_search(g, cfg.beam_width).ok();
            let beam_cost = beam.as_ref().map_or(f64::INFINITY, |b| b.cost);
            let beam_time = beam.as_ref().map_or(0.0, |b| b.wall_time.as_secs_f64());
            let ref_cost = match reference {
                GapReference::Beam => beam_cost,
                GapReference::BruteForce => brute_force_solve(g)?.optimum.unwrap_or(f64::NAN),
            };
            let mut sc = learned_config(g, cfg, Method::EsppNnaa, instance_seed);
            sc.loss.advantage_reference = if beam_cost.is_finite() { beam_cost } else { 0.0 };
            let trace = optimize(g, &sc).expect("finite loss on study instances");
            let train_time = trace.wall_time.as_secs_f64() + beam_time;
            let decode_seed = derive_seed(sc.seed, 0x6465);
            Ok(n_grid
                .iter()
                .map(|&n| {
                    let dc = DecodeConfig {
                        n_trials: n,
                        max_steps: g.node_count(),
                        seed: decode_seed,
                        mode: DecodeMode::Sample,
                    };
                    let decode = crate::search::sample_decode(g, &trace.final_probs, &dc);
                    let cost = if decode.feasible {
                        decode.cost.min(beam_cost)
                    } else {
                        beam_cost
                    };
                    let time = train_time + decode.wall_time.as_secs_f64();
                    let matched = (cost - ref_cost).abs() <= 1e-9;
                    (gap_percent(cost, ref_cost), time, matched)
                })
                .collect())
        });

    let mut rows = Vec::with_capacity(per_instance.len());
    for r in per_instance {
        rows.push(r?);
    }
    Ok(n_grid
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let gaps: Vec<f64> = rows.iter().map(|r| r[k].0).filter(|g| g.is_finite()).collect();
            let times: Vec<f64> = rows.iter().map(|r| r[k].1).collect();
            let matches = rows.iter().filter(|r| r[k].2).count();
            let (mean_gap, std_gap) = mean_std(&gaps);
            let (raw_mean_time, _) = mean_std(&times);
            SamplingCell {
                n_samples: n,
                mean_gap,
                std_gap,
                mean_time: match cfg.timing {
                    TimingMode::Wall => raw_mean_time,
                    TimingMode::Zero => 0.0,
                },
                ref_match_rate: matches as f64 / rows.len().max(1) as f64,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyCell {
    pub preset: &'static str,
    pub median_entropy: f64,
    pub mean_phi: f64,
    pub mean_gap: f64,
    pub mean_time: f64,
}

/// Trains the full configuration under each penalty preset, recording the
/// trained edge-probability entropy (determinism of the distribution), the
/// trained Phi, and the decoded gap versus beam.
pub fn penalty_sweep(
    instances: &[(String, Graph)],
    presets: &[PenaltyPreset],
    cfg: &ExperimentConfig,
) -> Vec<PenaltyCell> {
    presets
        .iter()
        .map(|&preset| {
            let mut cell_cfg = cfg.clone();
            cell_cfg.preset = preset;
            let stats: Vec<Option<(f64, f64, f64, f64)>> =
                par_map_instances(cfg.jobs, instances, |idx, _id, g| {
                    let instance_seed = derive_seed(cell_cfg.seed, idx as u64);
                    let beam = beam_search(g, cell_cfg.beam_width).ok();
                    let sc = learned_config(g, &cell_cfg, Method::EsppNnaa, instance_seed);
                    let out = solve_espp_with_beam(
                        g,
                        &sc,
                        cell_cfg.n_samples,
                        beam.clone(),
                        Method::EsppNnaa.tag(),
                    )
                    .ok()?;
                    let entropy = mean_edge_entropy(&out.trace.final_probs);
                    let phi = loss::phi(g, &out.trace.final_values, &out.trace.final_probs);
                    let beam_cost = beam.as_ref().map_or(f64::NAN, |b| b.cost);
                    let gap = gap_percent(out.result.cost, beam_cost);
                    let time = out.result.wall_time.as_secs_f64()
                        + beam.as_ref().map_or(0.0, |b| b.wall_time.as_secs_f64());
                    Some((entropy, phi, gap, time))
                });
            let ok: Vec<(f64, f64, f64, f64)> = stats.into_iter().flatten().collect();
            let entropies: Vec<f64> = ok.iter().map(|s| s.0).collect();
            let phis: Vec<f64> = ok.iter().map(|s| s.1).collect();
            let gaps: Vec<f64> = ok.iter().map(|s| s.2).filter(|g| g.is_finite()).collect();
            let times: Vec<f64> = ok.iter().map(|s| s.3).collect();
            PenaltyCell {
                preset: preset.name(),
                median_entropy: median(entropies),
                mean_phi: mean_std(&phis).0,
                mean_gap: mean_std(&gaps).0,
                mean_time: match cfg.timing {
                    TimingMode::Wall => mean_std(&times).0,
                    TimingMode::Zero => 0.0,
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyCell {
    pub label: String,
    pub mean_gap: f64,
    pub std_gap: f64,
    pub mean_time: f64,
    pub feasible_rate: f64,
}

fn nnaa_cell(label: String, instances: &[(String, Graph)], cfg: &ExperimentConfig) -> StudyCell {
    let rows: Vec<(f64, f64, bool)> = par_map_instances(cfg.jobs, instances, |idx, _id, g| {
        let instance_seed = derive_seed(cfg.seed, idx as u64);
        let beam = beam_search(g, cfg.beam_width).ok();
        let beam_cost = beam.as_ref().map_or(f64::NAN, |b| b.cost);
        let beam_time = beam.as_ref().map_or(0.0, |b| b.wall_time.as_secs_f64());
        let sc = learned_config(g, cfg, Method::EsppNnaa, instance_seed);
        match solve_espp_with_beam(g, &sc, cfg.n_samples, beam, Method::EsppNnaa.tag()) {
            Ok(out) => (
                gap_percent(out.result.cost, beam_cost),
                out.result.wall_time.as_secs_f64() + beam_time,
                true,
            ),
            Err(_) => (f64::INFINITY, 0.0, false),
        }
    });
    let gaps: Vec<f64> = rows.iter().map(|r| r.0).filter(|g| g.is_finite()).collect();
    let times: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let feasible = rows.iter().filter(|r| r.2).count();
    let (mean_gap, std_gap) = mean_std(&gaps);
    StudyCell {
        label,
        mean_gap,
        std_gap,
        mean_time: match cfg.timing {
            TimingMode::Wall => mean_std(&times).0,
            TimingMode::Zero => 0.0,
        },
        feasible_rate: feasible as f64 / rows.len().max(1) as f64,
    }
}

/// ER density grid: generates `per_cell` instances for each edge probability
/// and evaluates the learned solver against beam.
pub fn density_study(
    node_count: usize,
    densities: &[f64],
    per_cell: usize,
    weights: WeightDistribution,
    cfg: &ExperimentConfig,
) -> Result<Vec<StudyCell>, HarnessError> {
    densities
        .iter()
        .enumerate()
        .map(|(cell_idx, &p)| {
            let instances = generate_cell(
                GeneratorSpec::erdos_renyi(node_count, p, 0).with_weights(weights),
                per_cell,
                derive_seed(cfg.seed, 0x1000 + cell_idx as u64),
            )?;
            Ok(nnaa_cell(format!("p={p}"), &instances, cfg))
        })
        .collect()
}

/// Weight-distribution grid at a fixed ER density.
pub fn distribution_study(
    node_count: usize,
    edge_probability: f64,
    per_cell: usize,
    cfg: &ExperimentConfig,
) -> Result<Vec<StudyCell>, HarnessError> {
    let dists: [(&str, WeightDistribution); 3] = [
        ("uniform", WeightDistribution::Uniform),
        ("normal", WeightDistribution::normal_default()),
        ("lognormal", WeightDistribution::lognormal_default()),
    ];
    dists
        .iter()
        .enumerate()
        .map(|(cell_idx, (name, dist))| {
            let instances = generate_cell(
                GeneratorSpec::erdos_renyi(node_count, edge_probability, 0).with_weights(*dist),
                per_cell,
                derive_seed(cfg.seed, 0x2000 + cell_idx as u64),
            )?;
            Ok(nnaa_cell(name.to_string(), &instances, cfg))
        })
        .collect()
}

/// Generates a seeded in-memory cell of instances named by index.
pub fn generate_cell(
    template: GeneratorSpec,
    count: usize,
    master_seed: u64,
) -> Result<Vec<(String, Graph)>, HarnessError> {
    (0..count)
        .map(|i| {
            let mut spec = template;
            spec.seed = derive_seed(master_seed, i as u64);
            let g = generate(&spec)?;
            Ok((format!("{i:04}"), g))
        })
        .collect()
}

/// Loss component selector for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossComponent {
    Da,
    Dpa,
    Ab,
    Adv,
    Phi,
}

impl LossComponent {
    pub const ALL: [LossComponent; 5] = [
        LossComponent::Da,
        LossComponent::Dpa,
        LossComponent::Ab,
        LossComponent::Adv,
        LossComponent::Phi,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            LossComponent::Da => "da",
            LossComponent::Dpa => "dpa",
            LossComponent::Ab => "ab",
            LossComponent::Adv => "adv",
            LossComponent::Phi => "phi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.tag() == s)
    }

    fn disable(self, toggles: &mut LossToggles) {
        match self {
            LossComponent::Da => toggles.da = false,
            LossComponent::Dpa => toggles.dpa = false,
            LossComponent::Ab => toggles.ab = false,
            LossComponent::Adv => toggles.adv = false,
            LossComponent::Phi => toggles.phi = false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub config: String,
    pub mean_gap: f64,
    pub std_gap: f64,
    pub mean_time: f64,
}

/// Leave-one-out ablation: the full configuration first, then each requested
/// drop, all on the same instances and seeds.
pub fn ablation_study(
    instances: &[(String, Graph)],
    drops: &[LossComponent],
    cfg: &ExperimentConfig,
) -> Vec<AblationCell> {
    let mut configs: Vec<(String, Option<LossComponent>)> = vec![("full".to_string(), None)];
    configs.extend(drops.iter().map(|&c| (format!("no-{}", c.tag()), Some(c))));

    configs
        .into_iter()
        .map(|(name, drop)| {
            let rows: Vec<(f64, f64)> = par_map_instances(cfg.jobs, instances, |idx, _id, g| {
                let instance_seed = derive_seed(cfg.seed, idx as u64);
                let beam = beam_search(g, cfg.beam_width).ok();
                let beam_cost = beam.as_ref().map_or(f64::NAN, |b| b.cost);
                let beam_time = beam.as_ref().map_or(0.0, |b| b.wall_time.as_secs_f64());
                let mut sc = learned_config(g, cfg, Method::EsppNnaa, instance_seed);
                if let Some(c) = drop {
                    c.disable(&mut sc.loss.toggles);
                }
                match solve_espp_with_beam(g, &sc, cfg.n_samples, beam, Method::EsppNnaa.tag()) {
                    Ok(out) => (
                        gap_percent(out.result.cost, beam_cost),
                        out.result.wall_time.as_secs_f64() + beam_time,
                    ),
                    Err(_) => (f64::INFINITY, 0.0),
                }
            });
            let gaps: Vec<f64> = rows.iter().map(|r| r.0).filter(|g| g.is_finite()).collect();
            let times: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let (mean_gap, std_gap) = mean_std(&gaps);
            AblationCell {
                config: name,
                mean_gap,
                std_gap,
                mean_time: match cfg.timing {
                    TimingMode::Wall => mean_std(&times).0,
                    TimingMode::Zero => 0.0,
                },
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetStats {
    pub train: usize,
    pub test: usize,
    pub val: usize,
}

/// Writes `count` seeded instances under `dir/{train,test,val}` with a
/// 70/20/10 split; instance i uses seed `derive_seed(master_seed, i)`.
pub fn build_dataset(
    dir: &FsPath,
    template: &GeneratorSpec,
    count: usize,
    master_seed: u64,
) -> Result<DatasetStats, HarnessError> {
    let n_train = count * 7 / 10;
    let n_test = count * 2 / 10;
    let n_val = count - n_train - n_test;
    for split in ["train", "test", "val"] {
        std::fs::create_dir_all(dir.join(split))?;
    }
    for i in 0..count {
        let mut spec = *template;
        spec.seed = derive_seed(master_seed, i as u64);
        let g = generate(&spec)?;
        let (split, k) = if i < n_train {
            ("train", i)
        } else if i < n_train + n_test {
            ("test", i - n_train)
        } else {
            ("val", i - n_train - n_test)
        };
        let path = dir.join(split).join(format!("{k:04}.json"));
        let file = std::fs::File::create(path)?;
        write_graph(&g, std::io::BufWriter::new(file))?;
    }
    Ok(DatasetStats {
        train: n_train,
        test: n_test,
        val: n_val,
    })
}

pub fn load_graph_file(path: &FsPath) -> Result<Graph, HarnessError> {
    let file = std::fs::File::open(path)?;
    Ok(read_graph(std::io::BufReader::new(file))?)
}

/// Loads `dataset/<split>/*.json` in filename order; instance ids are
/// `<split>/<stem>`.
pub fn load_split(dataset: &FsPath, split: &str) -> Result<Vec<(String, Graph)>, HarnessError> {
    let dir = dataset.join(split);
    if !dir.is_dir() {
        return Err(HarnessError::MissingSplit(dir));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let stem = p.file_stem().unwrap_or_default().to_string_lossy().to_string();
            Ok((format!("{split}/{stem}"), load_graph_file(&p)?))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x}")
    }
}

pub const RECORDS_CSV_HEADER: &str =
    "instance,method,cost,gap_percent,feasible,wall_time_s,samples_used";

pub fn record_csv_row(r: &ExperimentRecord) -> String {
    format!(
        "{},{},{},{},{},{:.6},{}",
        r.instance,
        r.method,
        fmt_f64(r.cost),
        fmt_f64(r.gap_percent),
        r.feasible,
        r.wall_time_s,
        r.samples_used
    )
}

pub fn records_csv(records: &[ExperimentRecord]) -> String {
    let mut out = String::from(RECORDS_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&record_csv_row(r));
        out.push('\n');
    }
    out
}

pub const SUMMARY_CSV_HEADER: &str = "method,mean_gap,std_gap,mean_time";

pub fn summaries_csv(summaries: &[MethodSummary]) -> String {
    let mut out = String::from(SUMMARY_CSV_HEADER);
    out.push('\n');
    for s in summaries {
        out.push_str(&format!(
            "{},{},{},{:.6}\n",
            s.method,
            fmt_f64(s.mean_gap),
            fmt_f64(s.std_gap),
            s.mean_time
        ));
    }
    out
}

pub fn sampling_csv(cells: &[SamplingCell]) -> String {
    let mut out = String::from("n_samples,mean_gap,std_gap,mean_time,ref_match_rate\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{:.6},{}\n",
            c.n_samples,
            fmt_f64(c.mean_gap),
            fmt_f64(c.std_gap),
            c.mean_time,
            fmt_f64(c.ref_match_rate)
        ));
    }
    out
}

pub fn penalty_csv(cells: &[PenaltyCell]) -> String {
    let mut out = String::from("preset,median_entropy,mean_phi,mean_gap,mean_time\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{:.6}\n",
            c.preset,
            fmt_f64(c.median_entropy),
            fmt_f64(c.mean_phi),
            fmt_f64(c.mean_gap),
            c.mean_time
        ));
    }
    out
}

pub fn study_csv(cells: &[StudyCell]) -> String {
    let mut out = String::from("cell,mean_gap,std_gap,mean_time,feasible_rate\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{:.6},{}\n",
            c.label,
            fmt_f64(c.mean_gap),
            fmt_f64(c.std_gap),
            c.mean_time,
            fmt_f64(c.feasible_rate)
        ));
    }
    out
}

pub fn ablation_csv(cells: &[AblationCell]) -> String {
    let mut out = String::from("config,mean_gap,std_gap,mean_time\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{:.6}\n",
            c.config,
            fmt_f64(c.mean_gap),
            fmt_f64(c.std_gap),
            c.mean_time
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cell(n: usize, count: usize, seed: u64) -> Vec<(String, Graph)> {
        generate_cell(GeneratorSpec::erdos_renyi(n, 0.3, 0), count, seed).unwrap()
    }

    fn fast_cfg() -> ExperimentConfig {
        ExperimentConfig {
            n_samples: 30,
            timing: TimingMode::Zero,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn gap_examples() {
        assert_eq!(gap_percent(2.0, 2.0), 0.0);
        assert_eq!(gap_percent(-2.5, -2.0), -25.0);
        assert_eq!(gap_percent(1.0, 0.0), 100.0);
        assert!(gap_uses_absolute_fallback(0.0));
        assert!(!gap_uses_absolute_fallback(-2.0));
    }

    #[test]
    fn beam_only_cell_has_zero_gaps() {
        let instances = small_cell(9, 6, 11);
        let out = run_cell(&instances, &[Method::Beam], &fast_cfg()).unwrap();
        assert_eq!(out.records.len(), 6);
        assert!(out.records.iter().all(|r| r.gap_percent == 0.0 && r.feasible));
        assert_eq!(out.summaries[0].mean_gap, 0.0);
        assert_eq!(out.summaries[0].std_gap, 0.0);
    }

    #[test]
    fn labeling_never_loses_to_any_method() {
        let instances = small_cell(8, 5, 12);
        let methods = [Method::Labeling, Method::Beam, Method::Randomized];
        let out = run_cell(&instances, &methods, &fast_cfg()).unwrap();
        for (id, _) in &instances {
            let rows: Vec<&ExperimentRecord> =
                out.records.iter().filter(|r| &r.instance == id).collect();
            let exact = rows.iter().find(|r| r.method == "labeling").unwrap();
            assert!(exact.gap_percent <= 1e-9, "labeling above beam on {id}");
            for r in &rows {
                if r.cost.is_finite() {
                    assert!(
                        exact.cost <= r.cost + 1e-9,
                        "{} beat labeling on {id}",
                        r.method
                    );
                }
            }
        }
    }

    #[test]
    fn reruns_are_byte_identical_without_timing() {
        let instances = small_cell(9, 4, 13);
        let methods = [Method::EsppNn, Method::Beam, Method::Randomized];
        let cfg = fast_cfg();
        let a = run_cell(&instances, &methods, &cfg).unwrap();
        let b = run_cell(&instances, &methods, &cfg).unwrap();
        assert_eq!(records_csv(&a.records), records_csv(&b.records));
        assert_eq!(summaries_csv(&a.summaries), summaries_csv(&b.summaries));
    }

    #[test]
    fn parallel_and_serial_runs_agree() {
        let instances = small_cell(9, 5, 14);
        let methods = [Method::Randomized, Method::Beam];
        let mut serial_cfg = fast_cfg();
        serial_cfg.jobs = Some(1);
        let mut parallel_cfg = fast_cfg();
        parallel_cfg.jobs = Some(4);
        let a = run_cell(&instances, &methods, &serial_cfg).unwrap();
        let b = run_cell(&instances, &methods, &parallel_cfg).unwrap();
        assert_eq!(records_csv(&a.records), records_csv(&b.records));
    }

    #[test]
    fn streaming_preserves_order_and_content() {
        let instances = small_cell(9, 5, 15);
        let methods = [Method::Beam, Method::Randomized];
        let cfg = fast_cfg();
        let mut streamed = String::from(RECORDS_CSV_HEADER);
        streamed.push('\n');
        let out = run_cell_streaming(&instances, &methods, &cfg, |rows| {
            for r in rows {
                streamed.push_str(&record_csv_row(r));
                streamed.push('\n');
            }
        })
        .unwrap();
        assert_eq!(streamed, records_csv(&out.records));
    }

    #[test]
    fn empty_method_list_is_rejected() {
        let instances = small_cell(8, 2, 16);
        assert!(matches!(
            run_cell(&instances, &[], &fast_cfg()),
            Err(HarnessError::EmptyMethods)
        ));
    }

    #[test]
    fn dataset_split_sizes_and_loading() {
        let dir = tempfile::tempdir().unwrap();
        let template = GeneratorSpec::erdos_renyi(8, 0.3, 0);
        let stats = build_dataset(dir.path(), &template, 10, 99).unwrap();
        assert_eq!((stats.train, stats.test, stats.val), (7, 2, 1));
        let test = load_split(dir.path(), "test").unwrap();
        assert_eq!(test.len(), 2);
        assert_eq!(test[0].0, "test/0000");
        let train = load_split(dir.path(), "train").unwrap();
        assert_eq!(train.len(), 7);
        assert!(load_split(dir.path(), "missing").is_err());
        // Rebuilding is deterministic.
        let dir2 = tempfile::tempdir().unwrap();
        build_dataset(dir2.path(), &template, 10, 99).unwrap();
        let a = std::fs::read_to_string(dir.path().join("test/0000.json")).unwrap();
        let b = std::fs::read_to_string(dir2.path().join("test/0000.json")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_study_gap_is_monotone_in_budget() {
        let instances = small_cell(9, 6, 17);
        let cells =
            sampling_study(&instances, &[10, 50, 150], GapReference::BruteForce, &fast_cfg())
                .unwrap();
        assert_eq!(cells.len(), 3);
        assert!(cells[2].mean_gap <= cells[0].mean_gap + 1e-9);
        assert!(cells[2].ref_match_rate >= cells[0].ref_match_rate - 1e-9);
    }

    #[test]
    fn entropy_of_uniform_probabilities_is_ln_two() {
        let g = generate(&GeneratorSpec::erdos_renyi(8, 0.4, 18)).unwrap();
        let p = EdgeProbabilities::uniform(&g, 0.5);
        assert!((mean_edge_entropy(&p) - 2f64.ln()).abs() < 1e-12);
        let saturated = EdgeProbabilities::uniform(&g, 1.0);
        assert_eq!(mean_edge_entropy(&saturated), 0.0);
    }

    #[test]
    fn ablation_study_emits_full_plus_drops() {
        let instances = small_cell(9, 2, 19);
        let mut cfg = fast_cfg();
        cfg.n_samples = 10;
        let cells = ablation_study(&instances, &[LossComponent::Da, LossComponent::Adv], &cfg);
        assert_eq!(cells.len(), 3);
        assert_eq!(cells[0].config, "full");
        assert_eq!(cells[1].config, "no-da");
        assert_eq!(cells[2].config, "no-adv");
        // Dropping the advantage term only shifts the loss by a constant.
        assert!((cells[0].mean_gap - cells[2].mean_gap).abs() < 1e-9);
    }

    #[test]
    fn density_and_distribution_cells_all_populate() {
        let mut cfg = fast_cfg();
        cfg.n_samples = 10;
        let cells = density_study(12, &[0.15, 0.4], 3, WeightDistribution::Uniform, &cfg).unwrap();
        assert_eq!(cells.len(), 2);
        for c in &cells {
            assert!(c.feasible_rate > 0.0, "cell {} empty", c.label);
            assert!(c.mean_gap.is_finite());
        }
        let cells = distribution_study(12, 0.3, 3, &cfg).unwrap();
        assert_eq!(cells.len(), 3);
        assert_eq!(
            cells.iter().map(|c| c.label.as_str()).collect::<Vec<_>>(),
            vec!["uniform", "normal", "lognormal"]
        );
        for c in &cells {
            assert!(c.feasible_rate > 0.0, "cell {} empty", c.label);
        }
    }

    #[test]
    fn penalty_sweep_reports_all_presets() {
        let mut cfg = fast_cfg();
        cfg.n_samples = 10;
        let instances = small_cell(9, 3, 20);
        let cells = penalty_sweep(&instances, &PenaltyPreset::ALL, &cfg);
        assert_eq!(cells.len(), 3);
        assert_eq!(
            cells.iter().map(|c| c.preset).collect::<Vec<_>>(),
            vec!["low", "medium", "high"]
        );
        for c in &cells {
            assert!(c.median_entropy.is_finite() && c.median_entropy >= 0.0);
            assert!(c.mean_phi.is_finite() && c.mean_phi >= 0.0);
        }
    }

    #[test]
    fn method_parsing_round_trips() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.tag()), Some(m));
        }
        assert_eq!(Method::parse("nope"), None);
        for c in LossComponent::ALL {
            assert_eq!(LossComponent::parse(c.tag()), Some(c));
        }
    }

    #[test]
    fn csv_rows_are_well_formed() {
        let r = ExperimentRecord {
            instance: "test/0000".to_string(),
            method: "beam".to_string(),
            cost: -1.25,
            gap_percent: 0.0,
            gap_absolute_fallback: false,
            feasible: true,
            wall_time_s: 0.0,
            samples_used: 0,
        };
        assert_eq!(
            record_csv_row(&r),
            "test/0000,beam,-1.25,0,true,0.000000,0"
        );
        let inf = ExperimentRecord {
            cost: f64::INFINITY,
            gap_percent: f64::INFINITY,
            feasible: false,
            ..r
        };
        assert!(record_csv_row(&inf).contains(",inf,inf,false,"));
    }
}
