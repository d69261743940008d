//! `painleve`: evaluate, integrate and verify the coupled Painleve systems.
//!
//! Exit codes: 0 pass, 2 usage or schema error, 3 domain error,
//! 4 verification failure.

mod p6;
mod state;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use painleve::flow::{self, FlowOptions, TangentSource, Trajectory};
use painleve::laxpair::{residual_suite, EntryFlip, LaxMutation, LaxReport, Which};
use painleve::loopalg::{PartitionKind, PartitionSpec};
use painleve::psys::{aux_flow, hamiltonian, vector_field, HamMutation, Params, PhasePoint, SystemId, SystemKind};
use painleve::sample::{Mode, Sampler};
use painleve::scalar::{Field, Quad, C64, Q};
use painleve::weyl::{check_equivariance, check_relations, check_symplectic, CheckConfig, Reflection, WeylMutation};
use painleve::PainleveError;
use rand::Rng;
use serde_json::{json, Value};

use state::{parse_state, render, render_all, state_json};

pub enum Failure {
    Schema(String),
    Domain(PainleveError),
    Verification(Value),
}

impl From<PainleveError> for Failure {
    fn from(e: PainleveError) -> Self {
        if e.is_domain() {
            Failure::Domain(e)
        } else {
            Failure::Schema(e.to_string())
        }
    }
}

type CliResult = Result<Value, Failure>;

#[derive(Parser)]
#[command(name = "painleve", version, about = "Coupled Painleve systems: Lax pairs, Weyl symmetry, integration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hamiltonian, vector field and aux flow at a JSON state.
    Eval(EvalArgs),
    /// Isomonodromy compatibility at sampled points or along a trajectory.
    LaxCheck(LaxArgs),
    /// Weyl group relations, symplecticity and equivariance.
    WeylCheck(WeylArgs),
    /// Integrate a state to `--t1`, writing `<out>.csv` and `<out>.json`.
    Integrate(IntegrateArgs),
    /// Cross-check the rank-one coupled system against a separate P_VI solver.
    P6Compare(P6Args),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Float,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Exact => Mode::Exact,
            ModeArg::Float => Mode::Float,
        }
    }
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Exact => "exact",
        Mode::Float => "float",
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TangentArg {
    Field,
    Trajectory,
}

#[derive(Args)]
struct EvalArgs {
    /// State JSON file, `-` for stdin.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "float")]
    mode: ModeArg,
}

#[derive(Args)]
struct LaxArgs {
    #[arg(long, alias = "spec")]
    partition: Option<String>,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, value_enum, default_value = "float")]
    mode: ModeArg,
    #[arg(long, default_value_t = 20)]
    points: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Check along a trajectory written by `integrate --out <stem>`.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Tangent used along a trajectory: the exact flow at each sample, or
    /// differences of the stored samples.
    #[arg(long, value_enum, default_value = "field")]
    tangent: TangentArg,
    /// Emit one JSON line per shard before the summary.
    #[arg(long)]
    jsonl: bool,
    /// Test hook: `B:row,col,exp`, `M:row,col,exp`, `H:i,j` or `dp1`.
    #[arg(long, hide = true)]
    mutate: Option<String>,
}

#[derive(Args)]
struct WeylArgs {
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, alias = "points", default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, hide = true)]
    mutate_r0: bool,
}

#[derive(Args)]
struct IntegrateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Start time; defaults to the state's `t`.
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long)]
    t1: f64,
    #[arg(long, default_value_t = 1e-10)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-12)]
    atol: f64,
    /// Output stem; writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    out: PathBuf,
    /// Record this many equal intervals by dense output instead of every step.
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Args)]
struct P6Args {
    #[arg(long, default_value_t = 2.0)]
    t0: f64,
    #[arg(long, default_value_t = 3.0)]
    t1: f64,
    #[arg(long, default_value_t = 1e-10)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-12)]
    atol: f64,
    /// Allowed endpoint deviation.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Optional PA2n1star n=1 state; sampled from the seed otherwise.
    #[arg(long = "in")]
    input: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Eval(a) => eval(a),
        Command::LaxCheck(a) => lax_check(a),
        Command::WeylCheck(a) => weyl_check(a),
        Command::Integrate(a) => integrate(a),
        Command::P6Compare(a) => p6_compare(a),
    };
    match outcome {
        Ok(report) => {
            emit(&report);
            ExitCode::SUCCESS
        }
        Err(Failure::Schema(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(Failure::Verification(report)) => {
            emit(&report);
            eprintln!("verification failed");
            ExitCode::from(4)
        }
    }
}

/// Print a report; a closed pipe downstream is not an error.
fn emit(report: &Value) {
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(report).expect("json"));
}

fn read_json(path: &Path) -> Result<Value, Failure> {
    let mut text = String::new();
    let res = if path.as_os_str() == "-" {
        std::io::stdin().read_to_string(&mut text)
    } else {
        File::open(path).and_then(|mut f| f.read_to_string(&mut text))
    };
    res.map_err(|e| Failure::Schema(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Schema(format!("{}: {e}", path.display())))
}

fn eval(a: EvalArgs) -> CliResult {
    let doc = read_json(&a.input)?;
    match Mode::from(a.mode) {
        Mode::Exact => eval_in::<Q>(&doc, true),
        Mode::Float => eval_in::<C64>(&doc, false),
    }
}

fn eval_in<F: Field>(doc: &Value, exact: bool) -> CliResult {
    let st = parse_state::<F>(doc)?;
    st.params.validate(st.sys)?;
    let h = hamiltonian(st.sys, &st.params, &st.x)?;
    let (dq, dp) = vector_field(st.sys, &st.params, &st.x)?;
    let mut out = json!({
        "system": st.sys.kind.label(),
        "n": st.sys.n,
        "mode": if exact { "exact" } else { "float" },
        "hamiltonian": render(&h, exact),
        "dq_dt": render_all(&dq, exact),
        "dp_dt": render_all(&dp, exact),
    });
    if let (Some(spec), Some(aux)) = (st.spec, &st.aux) {
        let flow = aux_flow(spec, &st.params, &st.x, aux)?;
        out["partition"] = json!(spec.kind.label());
        out["aux_dlog_dt"] = render_all(&flow, exact);
    }
    Ok(out)
}

fn parse_mutation(s: &str) -> Result<LaxMutation, Failure> {
    let bad = || Failure::Schema(format!("bad --mutate value {s:?}"));
    if s == "dp1" {
        return Ok(LaxMutation { bump_dp1: true, ..Default::default() });
    }
    let (head, rest) = s.split_once(':').ok_or_else(bad)?;
    let nums: Vec<i64> = rest.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
    match (head, nums.as_slice()) {
        ("B" | "M", [r, c, e]) => {
            let which = if head == "B" { Which::B } else { Which::M };
            Ok(LaxMutation {
                entry: Some(EntryFlip { which, row: *r as usize, col: *c as usize, exp: *e as i32 }),
                ..Default::default()
            })
        }
        ("H", [i, j]) => Ok(LaxMutation {
            ham: HamMutation { term: Some((*i as usize, *j as usize)) },
            ..Default::default()
        }),
        _ => Err(bad()),
    }
}

fn lax_check(a: LaxArgs) -> CliResult {
    let mutation = a.mutate.as_deref().map(parse_mutation).transpose()?.unwrap_or_default();
    if let Some(stem) = &a.input {
        return lax_along(stem, a.tol, a.tangent);
    }
    let label = a.partition.as_deref().ok_or_else(|| Failure::Schema("--partition is required".into()))?;
    let kind: PartitionKind = label.parse()?;
    let spec = PartitionSpec::new(kind, a.n)?;
    let mode = Mode::from(a.mode);
    const SHARD: usize = 25;
    let shards = a.points.div_ceil(SHARD).max(1);
    let mut total: Option<LaxReport> = None;
    for k in 0..shards {
        let points = SHARD.min(a.points - k * SHARD);
        let seed = a.seed.wrapping_add(k as u64 * 0x9e37_79b9);
        let part = match (mode, kind) {
            (Mode::Exact, PartitionKind::TwoNminusOneOne) => {
                residual_suite::<Quad>(spec, points, seed, mode, a.tol, &mutation)
            }
            (Mode::Exact, _) => residual_suite::<Q>(spec, points, seed, mode, a.tol, &mutation),
            (Mode::Float, _) => residual_suite::<C64>(spec, points, seed, mode, a.tol, &mutation),
        };
        if a.jsonl {
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string(&part).expect("json"));
        }
        total = Some(match total {
            None => part,
            Some(t) => t.merge(part),
        });
    }
    let report = total.expect("at least one shard");
    let mut out = serde_json::to_value(&report).expect("json");
    out["seed"] = json!(a.seed);
    out["tol"] = json!(a.tol);
    out["passed"] = json!(report.passed());
    if report.passed() {
        Ok(out)
    } else {
        Err(Failure::Verification(out))
    }
}

struct Loaded {
    traj: Trajectory,
    spec: Option<PartitionSpec>,
}

fn load_trajectory(stem: &Path) -> Result<Loaded, Failure> {
    let meta = read_json(&stem.with_extension("json"))?;
    let doc = meta.get("state").ok_or_else(|| Failure::Schema("metadata lacks 'state'".into()))?;
    let st = parse_state::<C64>(doc)?;
    let csv = stem.with_extension("csv");
    let file = File::open(&csv).map_err(|e| Failure::Schema(format!("{}: {e}", csv.display())))?;
    let traj = Trajectory::read_csv(BufReader::new(file), st.sys, st.spec, st.params)?;
    Ok(Loaded { traj, spec: st.spec })
}

fn lax_along(stem: &Path, tol: f64, tangent: TangentArg) -> CliResult {
    let Loaded { traj, spec } = load_trajectory(stem)?;
    let spec = spec.ok_or_else(|| Failure::Schema("trajectory has no partition".into()))?;
    let zs = [C64::new(0.7, 0.0), C64::new(1.3, 0.0)];
    let source = match tangent {
        TangentArg::Field => TangentSource::Field,
        TangentArg::Trajectory => TangentSource::Trajectory,
    };
    let max = flow::residual_along_with(&traj, spec, &zs, source)?;
    let out = json!({
        "spec": spec.kind.label(),
        "n": spec.n,
        "mode": "float",
        "points": traj.samples.len(),
        "max_residual": max,
        "failures": usize::from(max > tol),
        "tol": tol,
        "tangent": match tangent {
            TangentArg::Field => "field",
            TangentArg::Trajectory => "trajectory",
        },
        "source": stem.display().to_string(),
    });
    if max <= tol {
        Ok(out)
    } else {
        Err(Failure::Verification(out))
    }
}

fn weyl_check(a: WeylArgs) -> CliResult {
    if a.n == 0 {
        return Err(Failure::Schema("n must be >= 1".into()));
    }
    let mode = Mode::from(a.mode);
    let mut cfg = CheckConfig::new(a.n, a.trials, a.seed, mode);
    cfg.tol = a.tol;
    cfg.mutation = WeylMutation { corrupt_r0: a.mutate_r0 };
    let mut reports = match mode {
        Mode::Exact => check_relations::<Q>(&cfg),
        Mode::Float => check_relations::<C64>(&cfg),
    };
    for i in 0..2 * a.n + 2 {
        let r = Reflection::new(i, a.n)?;
        match mode {
            Mode::Exact => {
                reports.push(check_equivariance::<Q>(r, &cfg));
                reports.push(check_symplectic::<Q>(r, &cfg));
            }
            Mode::Float => {
                reports.push(check_equivariance::<C64>(r, &cfg));
                reports.push(check_symplectic::<C64>(r, &cfg));
            }
        }
    }
    let passed = reports.iter().all(|r| r.passed());
    let out = json!({
        "n": a.n,
        "mode": mode_name(mode),
        "seed": a.seed,
        "trials": a.trials,
        "tol": a.tol,
        "passed": passed,
        "reports": reports,
    });
    if passed {
        Ok(out)
    } else {
        Err(Failure::Verification(out))
    }
}

fn write_trajectory(stem: &Path, traj: &Trajectory) -> Result<(), Failure> {
    let io = |p: &Path, e: std::io::Error| Failure::Schema(format!("{}: {e}", p.display()));
    let csv = stem.with_extension("csv");
    let file = File::create(&csv).map_err(|e| io(&csv, e))?;
    traj.write_csv(BufWriter::new(file))?;
    let alpha: Vec<f64> = traj.params.alpha.iter().map(|a| a.re).collect();
    let last = traj.last().expect("trajectory has its initial sample");
    let mut meta = traj.metadata_json();
    let start = &traj.samples[0];
    meta["state"] = state_json(traj.sys, traj.spec, &alpha, traj.params.eta.re, start);
    meta["final"] = state_json(traj.sys, traj.spec, &alpha, traj.params.eta.re, last);
    let js = stem.with_extension("json");
    std::fs::write(&js, serde_json::to_string_pretty(&meta).expect("json")).map_err(|e| io(&js, e))?;
    Ok(())
}

fn integrate(a: IntegrateArgs) -> CliResult {
    let doc = read_json(&a.input)?;
    let mut st = parse_state::<C64>(&doc)?;
    if let Some(t0) = a.t0 {
        st.x.t = C64::new(t0, 0.0);
    }
    let t0 = st.x.t.re;
    flow::check_window(st.sys.kind, t0, a.t1)?;
    let mut opts = FlowOptions::tol(a.rtol, a.atol);
    if let Some(k) = a.points {
        if k == 0 {
            return Err(Failure::Schema("--points must be positive".into()));
        }
        opts.output = Some((0..=k).map(|i| t0 + (a.t1 - t0) * i as f64 / k as f64).collect());
    }
    let traj = flow::integrate(st.sys, st.spec, &st.params, &st.x, st.aux.as_ref(), a.t1, &opts)?;
    if traj.samples.is_empty() {
        return Err(Failure::Domain(traj.halted.unwrap_or(PainleveError::InvalidInput("no samples".into()))));
    }
    write_trajectory(&a.out, &traj)?;
    let summary = traj.metadata_json();
    match traj.halted {
        Some(e) => Err(Failure::Domain(e)),
        None => Ok(json!({
            "csv": a.out.with_extension("csv").display().to_string(),
            "json": a.out.with_extension("json").display().to_string(),
            "trajectory": summary,
        })),
    }
}

/// A seeded rank-one state well inside the domain.
fn sample_p6_state(seed: u64, t0: f64) -> (Params<C64>, PhasePoint<C64>) {
    let mut s = Sampler::new(seed, Mode::Float);
    let sys = SystemId { kind: SystemKind::PA2n1star, n: 1 };
    let params: Params<C64> = s.params(sys);
    let q = s.rng().gen_range(0.2..0.8);
    let p = s.rng().gen_range(-0.5..0.5);
    (params, PhasePoint::new(vec![C64::new(q, 0.0)], vec![C64::new(p, 0.0)], C64::new(t0, 0.0)))
}

fn p6_compare(a: P6Args) -> CliResult {
    let sys = SystemId { kind: SystemKind::PA2n1star, n: 1 };
    let (params, x0) = match &a.input {
        Some(path) => {
            let st = parse_state::<C64>(&read_json(path)?)?;
            if st.sys != sys {
                return Err(Failure::Schema(format!("p6-compare needs PA2n1star n=1, got {}", st.sys)));
            }
            let mut x = st.x;
            x.t = C64::new(a.t0, 0.0);
            (st.params, x)
        }
        None => sample_p6_state(a.seed, a.t0),
    };
    flow::check_window(sys.kind, a.t0, a.t1)?;
    let traj = flow::integrate(sys, None, &params, &x0, None, a.t1, &FlowOptions::tol(a.rtol, a.atol))?;
    if let Some(e) = traj.halted {
        return Err(Failure::Domain(e));
    }
    let end = traj.last().expect("endpoint");
    let alpha: Vec<f64> = params.alpha.iter().map(|v| v.re).collect();
    let ok = p6::Okamoto::from_roots(&alpha, params.eta.re);
    let steps = ((a.t1 - a.t0).abs() * 20_000.0).ceil() as usize;
    let (q_ref, p_ref) = ok.integrate(a.t0, a.t1, x0.q[0].re, x0.p[0].re, steps.max(1));
    let deviation = (end.q[0] - q_ref).abs().max((end.p[0] - p_ref).abs());
    let out = json!({
        "t0": a.t0,
        "t1": a.t1,
        "seed": a.seed,
        "rtol": a.rtol,
        "atol": a.atol,
        "tol": a.tol,
        "alpha": alpha,
        "eta": params.eta.re,
        "start": {"q": x0.q[0].re, "p": x0.p[0].re},
        "coupled": {"q": end.q[0], "p": end.p[0], "steps": traj.stats.accepted},
        "reference": {"q": q_ref, "p": p_ref, "steps": steps},
        "deviation": deviation,
        "passed": deviation <= a.tol,
    });
    if deviation <= a.tol {
        Ok(out)
    } else {
        Err(Failure::Verification(out))
    }
}
