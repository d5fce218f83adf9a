//! `cpd`: batch front-end for the CPD engine.
//!
//! Exit codes: 0 success, 1 solver or numerical failure, 2 usage error or
//! unreadable input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use cpd_core::generators::{
    border_rank_instance, bottleneck_instance, collinear_instance, matmul_tensor, random_instance, InstanceMetadata,
    ProblemInstance,
};
use cpd_core::io::{self, ProblemInfo, ResultRecord, TensorFormat};
use cpd_core::solver::{solve_multistart, MultiStartReport};
use cpd_core::{compute_mlsvd, gmm, CpdError, DenseTensor, KruskalOperand, SolverOptions};

#[derive(Parser)]
#[command(name = "cpd", version, about = "Dense CPD by damped Gauss-Newton with MLSVD compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose a tensor file.
    Decompose {
        input: PathBuf,
        #[command(flatten)]
        solve: SolveArgs,
        #[command(flatten)]
        out: OutputArgs,
        /// Comma-separated iteration caps; runs one solve per value.
        #[arg(long, value_delimiter = ',')]
        maxiter_sweep: Vec<usize>,
    },
    /// Multilinear SVD of a tensor file.
    Mlsvd {
        input: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        energy_tol: f64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Generate a synthetic instance and decompose it.
    Bench {
        #[command(flatten)]
        generator: GenArgs,
        #[command(flatten)]
        solve: SolveArgs,
        #[command(flatten)]
        out: OutputArgs,
        /// Reference report; the run is accepted when its error is within
        /// the reference error plus one percent.
        #[arg(long)]
        accept_ref: Option<PathBuf>,
    },
    /// Generate a synthetic tensor file (plus a `.json` metadata sidecar).
    Gen {
        #[command(flatten)]
        generator: GenArgs,
        #[arg(short, long)]
        output: PathBuf,
        /// Write the binary format instead of text.
        #[arg(long)]
        binary: bool,
    },
    /// Learn a Gaussian mixture from samples by the method of moments.
    Gmm {
        /// CSV of samples, one per row. Without it, samples are drawn from a
        /// random model with `--dim`, `--components` and `--variance`.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, default_value_t = 3)]
        components: usize,
        #[arg(long, default_value_t = 0.0059)]
        variance: f64,
        #[arg(long, default_value_t = 10_000)]
        count: usize,
        #[command(flatten)]
        solve: SolveArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
}

#[derive(Args, Clone)]
struct SolveArgs {
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    maxiter: usize,
    /// Relative-error stopping threshold.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    /// Symmetric CPD (all factors equal).
    #[arg(long)]
    symm: bool,
    #[arg(long)]
    no_compress: bool,
}

#[derive(Args, Clone)]
struct OutputArgs {
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Generator {
    Random,
    Collinear,
    Bottleneck,
    Border,
    Matmul,
}

#[derive(Args, Clone)]
struct GenArgs {
    #[arg(value_enum)]
    kind: Generator,
    /// Comma-separated dims (random/collinear/bottleneck use three).
    #[arg(long, value_delimiter = ',', default_values_t = vec![20usize, 20, 20])]
    dims: Vec<usize>,
    /// Rank of the generated ground truth.
    #[arg(long = "gen-rank", default_value_t = 5)]
    gen_rank: usize,
    #[arg(long, default_value_t = 0.5)]
    c: f64,
    #[arg(long, default_value_t = 0.0)]
    nu: f64,
    /// Border-rank sequence parameter.
    #[arg(long, default_value_t = 10.0)]
    k: f64,
    /// Matrix size for the multiplication tensor.
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long = "gen-seed")]
    gen_seed: Option<u64>,
}

/// Contents of the `<tensor>.json` sidecar written by `gen`.
#[derive(Serialize, Deserialize)]
struct Sidecar {
    metadata: InstanceMetadata,
    #[serde(default)]
    ground_truth: Option<KruskalOperand>,
}

enum Failure {
    Usage(anyhow::Error),
    Solver(anyhow::Error),
}

impl From<CpdError> for Failure {
    fn from(e: CpdError) -> Self {
        match e {
            CpdError::Io(_) | CpdError::Parse { .. } | CpdError::Parameter(_) | CpdError::Shape(_) => {
                Failure::Usage(e.into())
            }
            _ => Failure::Solver(e.into()),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

impl SolveArgs {
    fn options(&self, default_rank: Option<usize>) -> Outcome<SolverOptions> {
        let rank = self
            .rank
            .or(default_rank)
            .ok_or_else(|| usage("--rank is required"))?;
        let opts = SolverOptions {
            seed: self.seed,
            max_outer_iters: self.maxiter,
            stop_rel_error: self.tol,
            restarts: self.restarts,
            symmetric: self.symm,
            compress: !self.no_compress,
            ..SolverOptions::new(rank)
        };
        opts.validate().map_err(|e| Failure::Usage(e.into()))?;
        Ok(opts)
    }
}

impl GenArgs {
    fn seed(&self, fallback: u64) -> u64 {
        self.gen_seed.unwrap_or(fallback)
    }

    fn build(&self, seed: u64) -> Outcome<ProblemInstance> {
        let three = || -> Outcome<(usize, usize, usize)> {
            match self.dims.as_slice() {
                &[m, n, p] => Ok((m, n, p)),
                _ => Err(usage("this generator needs --dims m,n,p")),
            }
        };
        let inst = match self.kind {
            Generator::Random => random_instance(&self.dims, self.gen_rank, seed)?,
            Generator::Collinear => {
                let (m, n, p) = three()?;
                collinear_instance(m, n, p, self.gen_rank, self.c, seed)?
            }
            Generator::Bottleneck => {
                let (m, n, p) = three()?;
                bottleneck_instance(m, n, p, self.gen_rank, self.c, seed)?
            }
            Generator::Border => border_rank_instance(self.dims[0], self.k, seed)?,
            Generator::Matmul => matmul_tensor(self.n)?,
        };
        if self.nu > 0.0 {
            Ok(inst.with_noise(self.nu, seed.wrapping_add(1))?)
        } else if self.nu < 0.0 {
            Err(usage("--nu must be >= 0"))
        } else {
            Ok(inst)
        }
    }

    fn natural_rank(&self) -> usize {
        match self.kind {
            Generator::Border => 2,
            Generator::Matmul => self.n * self.n * self.n,
            _ => self.gen_rank,
        }
    }
}

fn emit(out: &OutputArgs, text: &str) -> Outcome<()> {
    match &out.output {
        Some(p) => io::write_atomic(p, text.as_bytes()).map_err(Failure::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Outcome<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Failure::Solver(e.into()))?;
    s.push('\n');
    Ok(s)
}

fn read_input(path: &Path) -> Outcome<DenseTensor> {
    io::read_tensor(path)
        .with_context(|| format!("cannot read tensor {}", path.display()))
        .map_err(Failure::Usage)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn read_sidecar(path: &Path) -> Option<Sidecar> {
    let text = std::fs::read_to_string(sidecar_path(path)).ok()?;
    serde_json::from_str(&text).ok()
}

fn check_symmetric_dims(t: &DenseTensor, opts: &SolverOptions) -> Outcome<()> {
    if opts.symmetric && t.dims().iter().any(|&d| d != t.dims()[0]) {
        return Err(usage(format!("--symm needs equal dimensions, got {:?}", t.dims())));
    }
    Ok(())
}

fn record(problem: ProblemInfo, opts: SolverOptions, rep: &MultiStartReport) -> ResultRecord {
    let mut r = ResultRecord::new(problem, opts);
    r.trace = rep.best.history.clone();
    r.rel_error = rep.best.rel_error;
    r.termination = Some(rep.best.termination);
    r.best_restart = rep.best.restart;
    r.runs = rep.runs.clone();
    r.operand = Some(rep.best.operand.clone());
    r.wall_time_secs = rep.wall_time_secs;
    r
}

fn clean_error(truth: Option<&KruskalOperand>, operand: &KruskalOperand) -> Option<f64> {
    let clean = truth?.to_full();
    let diff = clean.sub(&operand.to_full()).ok()?;
    Some(diff.norm() / clean.norm())
}

#[derive(Serialize)]
struct SweepPoint {
    maxiter: usize,
    rel_error: f64,
    iterations: usize,
    wall_time_secs: f64,
}

fn decompose(input: &Path, solve: &SolveArgs, out: &OutputArgs, sweep: &[usize]) -> Outcome<()> {
    let opts = solve.options(None)?;
    if sweep.contains(&0) {
        return Err(usage("--maxiter-sweep values must be positive"));
    }
    let t = read_input(input)?;
    check_symmetric_dims(&t, &opts)?;
    let sidecar = read_sidecar(input);
    let problem = ProblemInfo {
        source: input.display().to_string(),
        dims: t.dims().to_vec(),
        instance: sidecar.as_ref().map(|s| s.metadata.clone()),
    };
    let truth = sidecar.as_ref().and_then(|s| s.ground_truth.as_ref());

    if !sweep.is_empty() {
        let mut points = Vec::with_capacity(sweep.len());
        for &maxiter in sweep {
            let o = SolverOptions {
                max_outer_iters: maxiter,
                ..opts.clone()
            };
            let rep = solve_multistart(&t, &o)?;
            points.push(SweepPoint {
                maxiter,
                rel_error: rep.best.rel_error,
                iterations: rep.best.iterations(),
                wall_time_secs: rep.wall_time_secs,
            });
        }
        let text = match out.format {
            Format::Json => to_json(&points)?,
            Format::Csv => {
                let mut s = String::from("maxiter,rel_error,iterations,wall_time_secs\n");
                for p in &points {
                    s.push_str(&format!("{},{:?},{},{:?}\n", p.maxiter, p.rel_error, p.iterations, p.wall_time_secs));
                }
                s
            }
        };
        return emit(out, &text);
    }

    let rep = solve_multistart(&t, &opts)?;
    let mut r = record(problem, opts, &rep);
    r.clean_rel_error = clean_error(truth, &rep.best.operand);
    write_record(out, &r)
}

fn write_record(out: &OutputArgs, r: &ResultRecord) -> Outcome<()> {
    match out.format {
        Format::Json => emit(out, &r.to_json()?),
        Format::Csv => {
            let bytes = io::trace_csv(&r.trace)?;
            emit(out, &String::from_utf8_lossy(&bytes))
        }
    }
}

#[derive(Serialize)]
struct MlsvdSummary {
    dims: Vec<usize>,
    truncated_dims: Vec<usize>,
    numerical_ranks: Vec<usize>,
    relative_error: f64,
    reconstruction_error: f64,
    slice_energies: Vec<Vec<f64>>,
}

fn mlsvd(input: &Path, energy_tol: f64, out: &OutputArgs) -> Outcome<()> {
    if !(0.0..1.0).contains(&energy_tol) {
        return Err(usage("--energy-tol must lie in [0, 1)"));
    }
    let t = read_input(input)?;
    let res = compute_mlsvd(&t, energy_tol)?;
    let recon = res.reconstruct().sub(&t)?.norm() / t.norm();
    let summary = MlsvdSummary {
        dims: t.dims().to_vec(),
        truncated_dims: res.truncated_dims().to_vec(),
        numerical_ranks: res.numerical_ranks.clone(),
        relative_error: res.relative_error(),
        reconstruction_error: recon,
        slice_energies: res.slice_energies.clone(),
    };
    match out.format {
        Format::Json => emit(out, &to_json(&summary)?),
        Format::Csv => {
            let mut s = String::from("mode,index,singular_value\n");
            for (l, e) in summary.slice_energies.iter().enumerate() {
                for (i, v) in e.iter().enumerate() {
                    s.push_str(&format!("{l},{i},{v:?}\n"));
                }
            }
            emit(out, &s)
        }
    }
}

#[derive(Serialize)]
struct BenchOutput {
    #[serde(flatten)]
    record: ResultRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_rel_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    accepted: Option<bool>,
}

fn bench(generator: &GenArgs, solve: &SolveArgs, out: &OutputArgs, accept_ref: Option<&Path>) -> Outcome<()> {
    let opts = solve.options(Some(generator.natural_rank()))?;
    let reference = match accept_ref {
        Some(p) => Some(
            io::read_report(p)
                .with_context(|| format!("cannot read reference report {}", p.display()))
                .map_err(Failure::Usage)?,
        ),
        None => None,
    };
    let inst = generator.build(generator.seed(solve.seed))?;
    check_symmetric_dims(&inst.tensor, &opts)?;
    let rep = solve_multistart(&inst.tensor, &opts)?;
    let problem = ProblemInfo {
        source: format!("generator:{}", inst.metadata.generator),
        dims: inst.tensor.dims().to_vec(),
        instance: Some(inst.metadata.clone()),
    };
    let mut r = record(problem, opts, &rep);
    r.clean_rel_error = Some(inst.clean_rel_error(&rep.best.operand)?);
    if out.format == Format::Csv {
        return write_record(out, &r);
    }
    let reference_rel_error = reference.map(|x| x.rel_error);
    let accepted = reference_rel_error.map(|e| r.rel_error <= e + e / 100.0);
    emit(
        out,
        &to_json(&BenchOutput {
            record: r,
            reference_rel_error,
            accepted,
        })?,
    )
}

fn gen(generator: &GenArgs, output: &Path, binary: bool) -> Outcome<()> {
    let inst = generator.build(generator.seed(0))?;
    let format = if binary {
        TensorFormat::Binary
    } else {
        TensorFormat::from_path(output)
    };
    io::write_tensor(&inst.tensor, output, format)?;
    let sidecar = Sidecar {
        metadata: inst.metadata.clone(),
        ground_truth: inst.ground_truth.clone(),
    };
    io::write_json(&sidecar, &sidecar_path(output))?;
    Ok(())
}

#[derive(Serialize)]
struct GmmOutput {
    estimate: gmm::GmmModel,
    raw_weights: Vec<f64>,
    cpd_rel_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<gmm::GmmModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weight_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn gmm_cmd(
    samples: Option<&Path>,
    dim: usize,
    components: usize,
    variance: f64,
    count: usize,
    solve: &SolveArgs,
    out: &OutputArgs,
) -> Outcome<()> {
    let opts = SolverOptions {
        symmetric: true,
        ..solve.options(Some(components))?
    };
    let k = opts.rank;
    let (set, truth) = match samples {
        Some(p) => {
            let m = io::read_samples_csv(p)
                .with_context(|| format!("cannot read samples {}", p.display()))
                .map_err(Failure::Usage)?;
            (gmm::SampleSet::from_samples(m)?, None)
        }
        None => {
            let model = gmm::GmmModel::random(dim, k, variance, solve.seed)?;
            (gmm::sample(&model, count, solve.seed.wrapping_add(1))?, Some(model))
        }
    };
    if k > set.dim() {
        return Err(usage(format!("{k} components exceed dimension {}", set.dim())));
    }
    let fit = gmm::learn(&set, k, &opts)?;
    let errors = match &truth {
        Some(t) => Some(gmm::aligned_errors(&fit.model, t)?),
        None => None,
    };
    let output = GmmOutput {
        estimate: fit.model.clone(),
        raw_weights: fit.raw_weights.clone(),
        cpd_rel_error: fit.cpd.rel_error,
        truth,
        weight_error: errors.map(|e| e.0),
        mean_error: errors.map(|e| e.1),
        fit: errors.map(|e| e.0 + e.1),
    };
    emit(out, &to_json(&output)?)
}

fn run(cli: Cli) -> Outcome<()> {
    match &cli.command {
        Command::Decompose {
            input,
            solve,
            out,
            maxiter_sweep,
        } => decompose(input, solve, out, maxiter_sweep),
        Command::Mlsvd { input, energy_tol, out } => mlsvd(input, *energy_tol, out),
        Command::Bench {
            generator,
            solve,
            out,
            accept_ref,
        } => bench(generator, solve, out, accept_ref.as_deref()),
        Command::Gen {
            generator,
            output,
            binary,
        } => gen(generator, output, *binary),
        Command::Gmm {
            samples,
            dim,
            components,
            variance,
            count,
            solve,
            out,
        } => gmm_cmd(samples.as_deref(), *dim, *components, *variance, *count, solve, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Ok(v) = std::env::var("CPD_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                cpd_core::exec::configure_threads(n);
            }
            _ => {
                eprintln!("error: CPD_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
