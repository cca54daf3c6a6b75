//! `espp` — command-line front end for the ESPP workbench.
//!
//! Subcommands: `generate` (datasets), `solve` (learned solver), `exact`
//! (labeling / brute force / Bellman-Ford), `decode` (decoders and beam),
//! `bench` (method matrices and studies), `ablate` (leave-one-out loss
//! ablations), `inspect` (per-edge slack/probability table).
//!
//! All randomness flows through `--seed` (default 0); identical invocations
//! produce identical outputs up to wall-clock columns.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use espp_core::exact::{
    bellman_ford_to_sink, brute_force_solve, labeling_solve, BellmanFordOutcome, ExactResult,
    SolveLimits,
};
use espp_core::graph::{read_graph, GeneratorSpec, Graph, GraphFamily, WeightDistribution};
use espp_core::harness::{
    self, ablation_csv, build_dataset, density_study, distribution_study, load_split,
    penalty_sweep, record_csv_row, run_cell_streaming, sampling_csv, sampling_study, study_csv,
    summaries_csv, ExperimentConfig, GapReference, LossComponent, Method, TimingMode,
    RECORDS_CSV_HEADER,
};
use espp_core::loss::PenaltyPreset;
use espp_core::model::{edge_probabilities, read_values, write_values, ValueAssignment};
use espp_core::search::{
    beam_search, randomized_decode, sample_decode, DecodeConfig, DecodeMode, PathResult,
    DEFAULT_BEAM_WIDTH,
};
use espp_core::solver::{SolveError, SolverConfig};

/// Exit code for an infeasible solve (no path reached the sink).
const EXIT_INFEASIBLE: i32 = 2;

#[derive(Parser)]
#[command(
    name = "espp",
    about = "Elementary shortest-path workbench: learned solver, exact and heuristic baselines, benchmark harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded dataset directory with train/test/val splits
    Generate(GenerateArgs),
    /// Train the learned solver on one instance and decode a path
    Solve(SolveArgs),
    /// Run an exact or reference solver on one instance
    Exact(ExactArgs),
    /// Decode a path with a chosen decoder
    Decode(DecodeArgs),
    /// Evaluate a method matrix or a study over a dataset
    Bench(BenchArgs),
    /// Leave-one-out loss-component ablation over a dataset
    Ablate(AblateArgs),
    /// Per-edge table of weights, values, slacks, and probabilities
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Er,
    Grid,
    Ba,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightsArg {
    Uniform,
    Normal,
    Lognormal,
}

#[derive(Args)]
struct GenerateArgs {
    /// Graph family
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Nodes per instance
    #[arg(long)]
    nodes: usize,
    /// Edge probability (Erdos-Renyi only)
    #[arg(long, default_value_t = 0.2)]
    edge_prob: f64,
    /// Attachment count (Barabasi-Albert only)
    #[arg(long, default_value_t = 2)]
    attach: usize,
    /// Edge-weight distribution
    #[arg(long, value_enum, default_value = "uniform")]
    weights: WeightsArg,
    /// Mean (normal) or log-scale mu (lognormal)
    #[arg(long, default_value_t = 0.0)]
    weight_mean: f64,
    /// Std dev (normal) or log-scale sigma (lognormal)
    #[arg(long, default_value_t = 1.0)]
    weight_std: f64,
    /// Sign-flip probability for normal/lognormal weights
    #[arg(long, default_value_t = 0.5)]
    flip_prob: f64,
    /// Number of instances (split 70/20/10 into train/test/val)
    #[arg(long)]
    count: usize,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// Instance file (JSON graph document)
    #[arg(long)]
    graph: PathBuf,
    /// Decoding samples
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Penalty preset
    #[arg(long, value_enum, default_value = "medium")]
    preset: PresetArg,
    /// Seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the per-iteration loss trace CSV here
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the trained value assignment here (inspect format)
    #[arg(long)]
    out_values: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Low,
    Medium,
    High,
}

impl From<PresetArg> for PenaltyPreset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Low => PenaltyPreset::Low,
            PresetArg::Medium => PenaltyPreset::Medium,
            PresetArg::High => PenaltyPreset::High,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ExactMethod {
    Labeling,
    Bruteforce,
    Bf,
}

#[derive(Args)]
struct ExactArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum)]
    method: ExactMethod,
    /// Label budget before truncation (labeling only)
    #[arg(long, default_value_t = 5_000_000)]
    max_labels: u64,
    /// Time budget in seconds before truncation (labeling only)
    #[arg(long, default_value_t = 300.0)]
    time_budget_s: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecodeMethod {
    Sample,
    Greedy,
    Beam,
    Random,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum)]
    method: DecodeMethod,
    /// Value assignment file; absent means all-zero values (p = 0.5)
    #[arg(long)]
    values: Option<PathBuf>,
    /// Trials for sampling decoders
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Beam width
    #[arg(long, default_value_t = DEFAULT_BEAM_WIDTH)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyArg {
    Sampling,
    Penalty,
    Density,
    Distribution,
}

#[derive(Args)]
struct BenchArgs {
    /// Dataset directory (evaluates the test split)
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Comma-separated method list
    #[arg(long, default_value = "espp-nnaa,beam,randomized")]
    methods: String,
    /// Records CSV output path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary CSV output path
    #[arg(long)]
    summary_out: Option<PathBuf>,
    /// Decoding samples per learned/randomized solve
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, value_enum, default_value = "medium")]
    preset: PresetArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Instance-level parallelism
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_BEAM_WIDTH)]
    beam_width: usize,
    /// Write wall-time columns as zero (byte-reproducible output)
    #[arg(long)]
    no_timing: bool,
    /// Run a study instead of the method matrix
    #[arg(long, value_enum)]
    study: Option<StudyArg>,
    /// Sample grid for the sampling study
    #[arg(long, default_value = "50,100,200")]
    n_grid: String,
    /// Gap reference for the sampling study
    #[arg(long, value_enum, default_value = "beam")]
    reference: ReferenceArg,
    /// Node count for generated study cells (density/distribution)
    #[arg(long, default_value_t = 30)]
    cell_nodes: usize,
    /// Instances per generated study cell
    #[arg(long, default_value_t = 100)]
    cell_count: usize,
    /// Density grid for the density study
    #[arg(long, default_value = "0.1,0.2,0.5")]
    densities: String,
    /// Edge probability for the distribution study
    #[arg(long, default_value_t = 0.2)]
    edge_prob: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReferenceArg {
    Beam,
    Bruteforce,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Component to drop: da | dpa | ab | adv | phi
    #[arg(long)]
    drop: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, value_enum, default_value = "medium")]
    preset: PresetArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    values: PathBuf,
}

fn main() {
    // Die quietly when the consumer of our stdout goes away (e.g. `| head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprintln!("espp: {}", first_line(&e.to_string()));
            std::process::exit(1);
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("espp: {}", first_line(&format!("{e:#}")));
            std::process::exit(1);
        }
    }
}

fn first_line(s: &str) -> &str {
    s.lines().next().unwrap_or("error")
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Exact(a) => cmd_exact(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn load_graph(path: &Path) -> Result<Graph> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_graph(BufReader::new(file)).with_context(|| format!("cannot parse {}", path.display()))
}

fn load_value_file(path: &Path) -> Result<ValueAssignment> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_values(BufReader::new(file)).with_context(|| format!("cannot parse {}", path.display()))
}

fn weight_distribution(a: &GenerateArgs) -> WeightDistribution {
    match a.weights {
        WeightsArg::Uniform => WeightDistribution::Uniform,
        WeightsArg::Normal => WeightDistribution::Normal {
            mean: a.weight_mean,
            std_dev: a.weight_std,
            flip_prob: a.flip_prob,
        },
        WeightsArg::Lognormal => WeightDistribution::LogNormal {
            mu: a.weight_mean,
            sigma: a.weight_std,
            flip_prob: a.flip_prob,
        },
    }
}

fn require_positive(value: usize, flag: &str) -> Result<()> {
    if value == 0 {
        bail!("{flag} must be at least 1");
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<i32> {
    require_positive(a.count, "--count")?;
    let family = match a.family {
        FamilyArg::Er => GraphFamily::ErdosRenyi {
            edge_probability: a.edge_prob,
        },
        FamilyArg::Grid => GraphFamily::Grid,
        FamilyArg::Ba => GraphFamily::BarabasiAlbert {
            attachment_count: a.attach,
        },
    };
    let template = GeneratorSpec {
        family,
        node_count: a.nodes,
        weights: weight_distribution(&a),
        seed: 0,
    };
    let stats = build_dataset(&a.out, &template, a.count, a.seed)?;
    println!("dataset: {}", a.out.display());
    println!("train: {}", stats.train);
    println!("test: {}", stats.test);
    println!("val: {}", stats.val);
    Ok(0)
}

fn print_path_result(r: &PathResult) {
    println!("solver: {}", r.solver);
    println!("feasible: {}", r.feasible);
    if r.cost.is_finite() {
        println!("cost: {:.6}", r.cost);
    } else {
        println!("cost: inf");
    }
    if let Some(path) = &r.path {
        let nodes: Vec<String> = path.nodes.iter().map(|n| n.to_string()).collect();
        println!("path: {}", nodes.join(" -> "));
    }
    println!("samples_used: {}", r.samples_used);
    println!("wall_time_s: {:.6}", r.wall_time.as_secs_f64());
}

fn cmd_solve(a: SolveArgs) -> Result<i32> {
    require_positive(a.samples, "--samples")?;
    let g = load_graph(&a.graph)?;
    let mut cfg = SolverConfig::defaults_for(&g);
    cfg.loss = cfg.loss.with_preset(a.preset.into());
    cfg.seed = a.seed;

    // The trace and trained values come from the same run the result does.
    let beam = beam_search(&g, DEFAULT_BEAM_WIDTH).ok();
    match espp_core::solver::solve_espp_with_beam(&g, &cfg, a.samples, beam, "espp-nnaa") {
        Ok(out) => {
            print_path_result(&out.result);
            if let Some(path) = &a.trace {
                let mut w = BufWriter::new(File::create(path)?);
                writeln!(w, "iteration,objective,flow,phi,da,dpa,ab,adv,total")?;
                for (i, bd) in out.trace.iterations.iter().enumerate() {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{},{}",
                        i + 1,
                        bd.objective,
                        bd.flow,
                        bd.phi,
                        bd.da,
                        bd.dpa,
                        bd.ab,
                        bd.adv,
                        bd.total
                    )?;
                }
            }
            if let Some(path) = &a.out_values {
                let mut w = BufWriter::new(File::create(path)?);
                write_values(&out.trace.final_values, &mut w)?;
            }
            Ok(0)
        }
        Err(SolveError::NoPath) => {
            println!("solver: espp-nnaa");
            println!("feasible: false");
            println!("cost: inf");
            Ok(EXIT_INFEASIBLE)
        }
        Err(e) => Err(e.into()),
    }
}

fn print_exact_result(method: &str, r: &ExactResult) {
    println!("method: {method}");
    match r.optimum {
        Some(c) => println!("optimum: {c:.6}"),
        None => println!("optimum: none"),
    }
    if let Some(path) = &r.path {
        let nodes: Vec<String> = path.nodes.iter().map(|n| n.to_string()).collect();
        println!("path: {}", nodes.join(" -> "));
    }
    println!("expanded_labels: {}", r.expanded_labels);
    println!("truncated: {}", r.truncated);
    println!("wall_time_s: {:.6}", r.wall_time.as_secs_f64());
}

fn cmd_exact(a: ExactArgs) -> Result<i32> {
    let g = load_graph(&a.graph)?;
    match a.method {
        ExactMethod::Labeling => {
            let limits = SolveLimits {
                max_labels: a.max_labels,
                time_budget: std::time::Duration::from_secs_f64(a.time_budget_s),
            };
            let r = labeling_solve(&g, &limits)?;
            print_exact_result("labeling", &r);
        }
        ExactMethod::Bruteforce => {
            let r = brute_force_solve(&g)?;
            print_exact_result("bruteforce", &r);
        }
        ExactMethod::Bf => {
            let t0 = std::time::Instant::now();
            match bellman_ford_to_sink(&g, g.node_count()) {
                BellmanFordOutcome::Converged(d) => {
                    println!("method: bellman-ford");
                    println!("negative_cycle: false");
                    let ds = d.value(g.source());
                    if ds.is_finite() {
                        println!("optimum: {ds:.6}");
                    } else {
                        println!("optimum: inf");
                    }
                    println!(
                        "convergence_iteration: {}",
                        d.convergence_iteration().unwrap_or(0)
                    );
                    println!("wall_time_s: {:.6}", t0.elapsed().as_secs_f64());
                }
                BellmanFordOutcome::NegativeCycle { iterations } => {
                    println!("method: bellman-ford");
                    println!("negative_cycle: true");
                    println!("iterations: {iterations}");
                    println!("wall_time_s: {:.6}", t0.elapsed().as_secs_f64());
                }
            }
        }
    }
    Ok(0)
}

fn cmd_decode(a: DecodeArgs) -> Result<i32> {
    require_positive(a.trials, "--trials")?;
    require_positive(a.width, "--width")?;
    let g = load_graph(&a.graph)?;
    let values = match &a.values {
        Some(p) => load_value_file(p)?,
        None => ValueAssignment::new(vec![0.0; g.node_count()]),
    };
    if values.len() != g.node_count() {
        bail!(
            "value file has {} entries for a {}-node graph",
            values.len(),
            g.node_count()
        );
    }
    let result = match a.method {
        DecodeMethod::Beam => beam_search(&g, a.width)?,
        DecodeMethod::Random => {
            let cfg = DecodeConfig {
                n_trials: a.trials,
                max_steps: g.node_count(),
                seed: a.seed,
                mode: DecodeMode::Sample,
            };
            randomized_decode(&g, &cfg)
        }
        DecodeMethod::Sample | DecodeMethod::Greedy => {
            let p = edge_probabilities(&g, &values);
            let cfg = DecodeConfig {
                n_trials: a.trials,
                max_steps: g.node_count(),
                seed: a.seed,
                mode: if matches!(a.method, DecodeMethod::Greedy) {
                    DecodeMode::Greedy
                } else {
                    DecodeMode::Sample
                },
            };
            sample_decode(&g, &p, &cfg)
        }
    };
    print_path_result(&result);
    Ok(if result.feasible { 0 } else { EXIT_INFEASIBLE })
}

fn parse_methods(s: &str) -> Result<Vec<Method>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| Method::parse(t).with_context(|| format!("unknown method {t:?}")))
        .collect()
}

fn experiment_config(
    samples: usize,
    preset: PresetArg,
    seed: u64,
    jobs: Option<usize>,
    beam_width: usize,
    no_timing: bool,
) -> ExperimentConfig {
    ExperimentConfig {
        n_samples: samples,
        beam_width,
        preset: preset.into(),
        labeling_limits: SolveLimits::default(),
        seed,
        jobs,
        timing: if no_timing {
            TimingMode::Zero
        } else {
            TimingMode::Wall
        },
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_bench(a: BenchArgs) -> Result<i32> {
    require_positive(a.samples, "--samples")?;
    require_positive(a.beam_width, "--beam-width")?;
    require_positive(a.cell_count, "--cell-count")?;
    let cfg = experiment_config(a.samples, a.preset, a.seed, a.jobs, a.beam_width, a.no_timing);
    match a.study {
        None => {
            let dataset = a.dataset.as_deref().context("--dataset is required")?;
            let methods = parse_methods(&a.methods)?;
            let instances = load_split(dataset, "test")?;

            // Stream rows so a partial results file stays parseable.
            let mut writer = match &a.out {
                Some(path) => {
                    let mut w = BufWriter::new(File::create(path)?);
                    writeln!(w, "{RECORDS_CSV_HEADER}")?;
                    w.flush()?;
                    Some(w)
                }
                None => None,
            };
            let out = run_cell_streaming(&instances, &methods, &cfg, |rows| {
                if let Some(w) = writer.as_mut() {
                    for r in rows {
                        let _ = writeln!(w, "{}", record_csv_row(r));
                    }
                    let _ = w.flush();
                }
            })?;
            drop(writer);

            let summary = summaries_csv(&out.summaries);
            print!("{summary}");
            if let Some(path) = &a.summary_out {
                write_text(path, &summary)?;
            }
        }
        Some(StudyArg::Sampling) => {
            let dataset = a.dataset.as_deref().context("--dataset is required")?;
            let instances = load_split(dataset, "test")?;
            let grid: Vec<usize> = a
                .n_grid
                .split(',')
                .map(|t| t.trim().parse::<usize>().context("bad --n-grid entry"))
                .collect::<Result<_>>()?;
            let reference = match a.reference {
                ReferenceArg::Beam => GapReference::Beam,
                ReferenceArg::Bruteforce => GapReference::BruteForce,
            };
            let cells = sampling_study(&instances, &grid, reference, &cfg)?;
            let csv = sampling_csv(&cells);
            print!("{csv}");
            if let Some(path) = &a.out {
                write_text(path, &csv)?;
            }
        }
        Some(StudyArg::Penalty) => {
            let dataset = a.dataset.as_deref().context("--dataset is required")?;
            let instances = load_split(dataset, "test")?;
            let cells = penalty_sweep(&instances, &PenaltyPreset::ALL, &cfg);
            let csv = harness::penalty_csv(&cells);
            print!("{csv}");
            if let Some(path) = &a.out {
                write_text(path, &csv)?;
            }
        }
        Some(StudyArg::Density) => {
            let densities: Vec<f64> = a
                .densities
                .split(',')
                .map(|t| t.trim().parse::<f64>().context("bad --densities entry"))
                .collect::<Result<_>>()?;
            let cells = density_study(
                a.cell_nodes,
                &densities,
                a.cell_count,
                WeightDistribution::Uniform,
                &cfg,
            )?;
            let csv = study_csv(&cells);
            print!("{csv}");
            if let Some(path) = &a.out {
                write_text(path, &csv)?;
            }
        }
        Some(StudyArg::Distribution) => {
            let cells = distribution_study(a.cell_nodes, a.edge_prob, a.cell_count, &cfg)?;
            let csv = study_csv(&cells);
            print!("{csv}");
            if let Some(path) = &a.out {
                write_text(path, &csv)?;
            }
        }
    }
    Ok(0)
}

fn cmd_ablate(a: AblateArgs) -> Result<i32> {
    require_positive(a.samples, "--samples")?;
    let component = LossComponent::parse(&a.drop)
        .with_context(|| format!("unknown component {:?} (expected da|dpa|ab|adv|phi)", a.drop))?;
    let cfg = experiment_config(
        a.samples,
        a.preset,
        a.seed,
        a.jobs,
        DEFAULT_BEAM_WIDTH,
        a.no_timing,
    );
    let instances = load_split(&a.dataset, "test")?;
    let cells = harness::ablation_study(&instances, &[component], &cfg);
    let csv = ablation_csv(&cells);
    print!("{csv}");
    if let Some(path) = &a.out {
        write_text(path, &csv)?;
    }
    Ok(0)
}

fn cmd_inspect(a: InspectArgs) -> Result<i32> {
    let g = load_graph(&a.graph)?;
    let values = load_value_file(&a.values)?;
    if values.len() != g.node_count() {
        bail!(
            "value file has {} entries for a {}-node graph",
            values.len(),
            g.node_count()
        );
    }
    let p = edge_probabilities(&g, &values);
    let slack = espp_core::loss::slack(&g, &values);
    println!("{:>4} {:>4} {:>12} {:>12} {:>12} {:>12} {:>8}", "u", "v", "w", "d(u)", "d(v)", "delta", "p");
    for (i, e) in g.edges().iter().enumerate() {
        println!(
            "{:>4} {:>4} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>8.6}",
            e.from,
            e.to,
            e.weight,
            values.value(e.from),
            values.value(e.to),
            slack[i],
            p.prob(i)
        );
    }
    Ok(0)
}
