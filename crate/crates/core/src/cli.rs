//! Batch entry points behind the `stefan` binary. Every run writes its
//! reports into `--out` together with a `run.json` manifest.
//!
//! Exit codes: 0 on success, 2 for configuration or input errors, 3 when the
//! forward solver or the optimizer fails.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::control::{discrete_norms, DiscreteControl};
use crate::energy::energy_report;
use crate::error::{Error, Result};
use crate::functional::{discrete_cost, synthetic_measurements, weak_residual};
use crate::grid::TimeGrid;
use crate::optimize::{
    minimize, warm_start, ControlMask, IspObjective, Method, OptOptions, OptStatus,
};
use crate::problem::{CoefficientExpr, ProblemConfig, ProblemData, SampledSeries, SolverSettings};
use crate::report::{fmt_num, Json};
use crate::state::{DiscreteState, ForwardSolver};

#[derive(Debug, Parser)]
#[command(
    name = "stefan",
    version,
    about = "Inverse one-phase Stefan problem solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the state for the reference control; writes state.csv, cost.json, energy.json.
    Forward(ForwardArgs),
    /// Minimize the discrete cost; writes trace.csv, control.csv, cost.json.
    Invert(InvertArgs),
    /// Sweep n over a dyadic list; writes sweep.csv.
    Converge(ConvergeArgs),
    /// Summation-identity and weak-form residuals; writes diagnose.json.
    Diagnose(DiagnoseArgs),
    /// Measurements from a forward solve plus Gaussian noise; writes nu.csv, mu.csv.
    MakeSynthetic(SyntheticArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Problem file (TOML).
    #[arg(long)]
    problem: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides `[grid] c_h` from the problem file.
    #[arg(long)]
    c_h: Option<f64>,
}

#[derive(Debug, Args)]
struct ForwardArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: usize,
    /// Control CSV `k,s_k,g_k`; defaults to the problem's `[control]`.
    #[arg(long)]
    control: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    FdGradient,
    PatternSearch,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MaskArg {
    Both,
    Flux,
    Boundary,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    /// `s = s0`, `g = 0`.
    Zero,
    /// The problem's reference control.
    Reference,
    /// `s` from the reference control, `g = 0`.
    ReferenceS,
}

#[derive(Debug, Args)]
struct OptArgs {
    #[arg(long, value_enum, default_value = "fd-gradient")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "both")]
    mask: MaskArg,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    fd_step: f64,
    #[arg(long, default_value_t = 1e-12)]
    tol_cost: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Starting control.
    #[arg(long, value_enum, default_value = "zero")]
    init: InitArg,
}

impl OptArgs {
    fn options(&self) -> Result<OptOptions> {
        if self.max_iters == 0
            || self.fd_step.is_nan()
            || self.fd_step <= 0.0
            || self.tol_cost.is_nan()
            || self.tol_cost < 0.0
        {
            return Err(Error::Precondition(
                "need max-iters >= 1, fd-step > 0 and tol-cost >= 0".into(),
            ));
        }
        Ok(OptOptions {
            method: match self.method {
                MethodArg::FdGradient => Method::FdGradient,
                MethodArg::PatternSearch => Method::PatternSearch,
            },
            mask: match self.mask {
                MaskArg::Both => ControlMask::Both,
                MaskArg::Flux => ControlMask::FluxOnly,
                MaskArg::Boundary => ControlMask::BoundaryOnly,
            },
            max_iters: self.max_iters,
            fd_step: self.fd_step,
            tol_cost: self.tol_cost,
            seed: self.seed,
            ..OptOptions::default()
        })
    }

    fn manifest(&self) -> Json {
        Json::obj([
            ("method", Json::Str(format!("{:?}", self.method))),
            ("mask", Json::Str(format!("{:?}", self.mask))),
            ("max_iters", Json::Int(self.max_iters as i64)),
            ("fd_step", Json::Num(self.fd_step)),
            ("tol_cost", Json::Num(self.tol_cost)),
            ("seed", Json::Int(self.seed as i64)),
            ("init", Json::Str(format!("{:?}", self.init))),
        ])
    }
}

#[derive(Debug, Args)]
struct InvertArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: usize,
    #[command(flatten)]
    opt: OptArgs,
}

#[derive(Debug, Args)]
struct ConvergeArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated list of step counts, e.g. `8,16,32,64`.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    /// Minimize at each n (warm-started from the previous n) instead of
    /// evaluating the reference control.
    #[arg(long)]
    optimize: bool,
    #[command(flatten)]
    opt: OptArgs,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: usize,
    /// Random test vectors per layer for the summation identity.
    #[arg(long, default_value_t = 100)]
    eta_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Test function for the weak form; defaults to `(T - t)*cos(x)`.
    #[arg(long)]
    test: Option<String>,
}

#[derive(Debug, Args)]
struct SyntheticArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: usize,
    /// Noise standard deviation relative to each series' RMS.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `argv` (including the program name), runs the command, and returns
/// the process exit code. Errors are reported on stderr.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// 3 for solver failures, 2 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_solver_failure() {
        3
    } else {
        2
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Forward(a) => forward(&a),
        Command::Invert(a) => invert(&a),
        Command::Converge(a) => converge(&a),
        Command::Diagnose(a) => diagnose(&a),
        Command::MakeSynthetic(a) => make_synthetic(&a),
    }
}

struct Session {
    cfg: ProblemConfig,
    settings: SolverSettings,
    out: PathBuf,
    hash: String,
}

impl Session {
    fn open(common: &Common) -> Result<Self> {
        let cfg = ProblemConfig::load(&common.problem)?;
        let mut settings = cfg.settings;
        if let Some(c_h) = common.c_h {
            if !(c_h > 0.0 && c_h.is_finite()) {
                return Err(Error::Precondition(format!(
                    "--c-h must be positive (got {c_h})"
                )));
            }
            settings.c_h = c_h;
        }
        std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
        let hash = hex::encode(Sha256::digest(&cfg.source));
        Ok(Session {
            cfg,
            settings,
            out: common.out.clone(),
            hash,
        })
    }

    fn problem(&self) -> &ProblemData {
        &self.cfg.problem
    }

    fn time(&self, n: usize) -> Result<TimeGrid> {
        if n == 0 {
            return Err(Error::Precondition("--n must be at least 1".into()));
        }
        TimeGrid::new(self.problem().horizon, n)
    }

    fn reference(&self, n: usize) -> Result<DiscreteControl> {
        match &self.cfg.control {
            Some(src) => src.discretize(self.problem().horizon, n),
            None => Err(Error::config(
                &self.cfg.path,
                "no reference control: add a [control] table or pass --control",
            )),
        }
    }

    fn initial(&self, init: InitArg, n: usize) -> Result<DiscreteControl> {
        let zero = || {
            DiscreteControl::constant(
                self.problem().s0,
                &TimeGrid::new(self.problem().horizon, n)?,
            )
            .with_g(vec![0.0; n + 1])
        };
        match init {
            InitArg::Zero => zero(),
            InitArg::Reference => self.reference(n),
            InitArg::ReferenceS => self.reference(n)?.with_g(vec![0.0; n + 1]),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(
        &self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<()> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))
    }

    fn write_json(&self, name: &str, json: &Json) -> Result<()> {
        self.write(name, |w| w.write_all(json.render().as_bytes()))
    }

    /// `run.json` with the config hash, time steps, `tau0`, and grid sizes.
    fn manifest(
        &self,
        command: &str,
        runs: &[RunInfo],
        extra: Vec<(&str, Json)>,
        files: &[&str],
    ) -> Result<()> {
        let tau0 = self.problem().tau0().map_or(Json::Null, Json::Num);
        let mut fields = vec![
            ("command", Json::Str(command.into())),
            ("problem", Json::Str(self.cfg.path.display().to_string())),
            ("config_sha256", Json::Str(self.hash.clone())),
            ("tau0", tau0),
            ("c_h", Json::Num(self.settings.c_h)),
            (
                "measurements",
                Json::Str(format!("{:?}", self.settings.measurements).to_lowercase()),
            ),
            (
                "runs",
                Json::Arr(runs.iter().map(RunInfo::to_json).collect()),
            ),
        ];
        fields.extend(extra);
        fields.push((
            "files",
            Json::Arr(files.iter().map(|f| Json::Str((*f).into())).collect()),
        ));
        self.write_json("run.json", &Json::obj(fields))
    }
}

struct RunInfo {
    n: usize,
    tau: f64,
    nodes: usize,
    base_step: f64,
    max_width: f64,
}

impl RunInfo {
    fn of(st: &DiscreteState) -> Self {
        RunInfo {
            n: st.time().steps(),
            tau: st.time().tau(),
            nodes: st.grid().nodes().len(),
            base_step: st.grid().base_step(),
            max_width: st.grid().max_width(),
        }
    }

    fn to_json(&self) -> Json {
        Json::obj([
            ("n", Json::Int(self.n as i64)),
            ("tau", Json::Num(self.tau)),
            ("grid_nodes", Json::Int(self.nodes as i64)),
            ("base_step", Json::Num(self.base_step)),
            ("max_width", Json::Num(self.max_width)),
        ])
    }
}

fn forward(a: &ForwardArgs) -> Result<i32> {
    let ses = Session::open(&a.common)?;
    let time = ses.time(a.n)?;
    let v = match &a.control {
        Some(path) => {
            let v = DiscreteControl::read_csv(path, time.horizon())?;
            if v.steps() != a.n {
                return Err(Error::config(
                    path,
                    format!("control has {} steps, --n is {}", v.steps(), a.n),
                ));
            }
            v
        }
        None => ses.reference(a.n)?,
    };
    let solver = ForwardSolver::new(ses.problem(), ses.settings)?;
    let st = solver.solve(&v)?;
    let cost = discrete_cost(&st, ses.problem());
    let energy = energy_report(&st, ses.problem())?;
    ses.write("state.csv", |w| st.write_csv(w))?;
    ses.write_json("cost.json", &cost.to_json(a.n, time.tau()))?;
    ses.write_json("energy.json", &energy.to_json())?;
    ses.write("control.csv", |w| v.write_csv(w))?;
    let mut extra = Vec::new();
    if let Some(case) = &ses.cfg.manufactured {
        let err = case.nodal_error(&st)?;
        extra.push(("max_error", Json::Num(err.max)));
        extra.push(("front_error", Json::Num(err.front)));
    }
    ses.manifest(
        "forward",
        &[RunInfo::of(&st)],
        extra,
        &["state.csv", "cost.json", "energy.json", "control.csv"],
    )?;
    info!("forward: n={} total cost {}", a.n, fmt_num(cost.total));
    Ok(0)
}

fn invert(a: &InvertArgs) -> Result<i32> {
    let ses = Session::open(&a.common)?;
    ses.time(a.n)?;
    let opts = a.opt.options()?;
    let v0 = ses.initial(a.opt.init, a.n)?;
    let obj = IspObjective::new(ses.problem(), ses.settings)?;
    let result = minimize(&obj, &v0, &opts);
    ses.write("trace.csv", |w| result.write_trace(w))?;
    ses.write("control.csv", |w| result.best.write_csv(w))?;
    let mut files = vec!["trace.csv", "control.csv"];
    let mut runs = Vec::new();
    if let Some(last) = result.history.last() {
        ses.write_json("cost.json", &last.cost.to_json(a.n, v0.tau()))?;
        files.push("cost.json");
        runs.push(RunInfo::of(&obj.solver().solve(&result.best)?));
    }
    ses.manifest(
        "invert",
        &runs,
        vec![
            ("optimizer", a.opt.manifest()),
            ("status", Json::Str(result.status.as_str().into())),
            ("evals", Json::Int(result.evals as i64)),
        ],
        &files,
    )?;
    if result.status == OptStatus::SolverFailure {
        eprintln!("error: the forward solver failed at the starting control");
        return Ok(3);
    }
    Ok(0)
}

struct SweepRow {
    n: usize,
    st_info: RunInfo,
    values: Vec<f64>,
}

const SWEEP_COLUMNS: [&str; 13] = [
    "total",
    "boundary_term",
    "front_term",
    "s_norm_sq",
    "g_norm_sq",
    "first_lhs",
    "first_rhs",
    "second_lhs",
    "second_rhs",
    "first_ratio",
    "second_ratio",
    "max_error",
    "front_error",
];

fn sweep_row(ses: &Session, v: &DiscreteControl) -> Result<SweepRow> {
    let p = ses.problem();
    let st = ForwardSolver::new(p, ses.settings)?.solve(v)?;
    let cost = discrete_cost(&st, p);
    let norms = discrete_norms(v);
    let e = energy_report(&st, p)?;
    let mut values = vec![
        cost.total,
        cost.boundary_term,
        cost.front_term,
        norms.s_norm_sq,
        norms.g_norm_sq,
        e.first_lhs(),
        e.first_rhs_data(),
        e.second_lhs(),
        e.second_rhs_data(),
        e.first_ratio(),
        e.second_ratio(),
    ];
    match &ses.cfg.manufactured {
        Some(case) => {
            let err = case.nodal_error(&st)?;
            values.extend([err.max, err.front]);
        }
        None => values.extend([f64::NAN, f64::NAN]),
    }
    Ok(SweepRow {
        n: v.steps(),
        st_info: RunInfo::of(&st),
        values,
    })
}

fn converge(a: &ConvergeArgs) -> Result<i32> {
    let ses = Session::open(&a.common)?;
    for &n in &a.n {
        ses.time(n)?;
    }
    let mut extra = Vec::new();
    let rows: Vec<SweepRow> = if a.optimize {
        let opts = a.opt.options()?;
        let obj = IspObjective::new(ses.problem(), ses.settings)?;
        let mut rows = Vec::with_capacity(a.n.len());
        let mut prev: Option<DiscreteControl> = None;
        let mut statuses = Vec::new();
        for &n in &a.n {
            let v0 = match &prev {
                Some(v) => warm_start(v, n)?,
                None => ses.initial(a.opt.init, n)?,
            };
            let result = minimize(&obj, &v0, &opts);
            if result.status == OptStatus::SolverFailure {
                eprintln!("error: the forward solver failed at n = {n}");
                return Ok(3);
            }
            statuses.push(Json::Str(result.status.as_str().into()));
            rows.push(sweep_row(&ses, &result.best)?);
            prev = Some(result.best);
        }
        extra.push(("optimizer", a.opt.manifest()));
        extra.push(("statuses", Json::Arr(statuses)));
        rows
    } else {
        // independent entries; collected in list order
        let controls =
            a.n.iter()
                .map(|&n| ses.reference(n))
                .collect::<Result<Vec<_>>>()?;
        std::thread::scope(|scope| {
            let handles: Vec<_> = controls
                .iter()
                .map(|v| scope.spawn(|| sweep_row(&ses, v)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    };

    ses.write("sweep.csv", |w| {
        writeln!(w, "n,tau,h,{}", SWEEP_COLUMNS.join(","))?;
        for row in &rows {
            write!(
                w,
                "{},{},{}",
                row.n,
                fmt_num(row.st_info.tau),
                fmt_num(row.st_info.max_width)
            )?;
            for v in &row.values {
                if v.is_finite() {
                    write!(w, ",{}", fmt_num(*v))?;
                } else {
                    write!(w, ",")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    let runs: Vec<RunInfo> = rows.into_iter().map(|r| r.st_info).collect();
    ses.manifest("converge", &runs, extra, &["sweep.csv"])?;
    Ok(0)
}

fn diagnose(a: &DiagnoseArgs) -> Result<i32> {
    let ses = Session::open(&a.common)?;
    ses.time(a.n)?;
    let p = ses.problem();
    let v = ses.reference(a.n)?;
    let st = ForwardSolver::new(p, ses.settings)?.solve(&v)?;

    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut per_layer = Vec::with_capacity(a.n);
    let mut worst: f64 = 0.0;
    for k in 1..=a.n {
        let m = st.front_index(k);
        let mut layer_worst: f64 = 0.0;
        for _ in 0..a.eta_samples {
            let eta: Vec<f64> = (0..=m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = st.residual_identity(k, &eta);
            let rel = if r.scale > 0.0 {
                r.value.abs() / r.scale
            } else {
                r.value.abs()
            };
            layer_worst = layer_worst.max(rel);
        }
        worst = worst.max(layer_worst);
        per_layer.push(layer_worst);
    }

    let test_src = a
        .test
        .clone()
        .unwrap_or_else(|| format!("({} - t)*cos(x)", fmt_num(p.horizon)));
    let test = CoefficientExpr::parse(&test_src)
        .map_err(|e| Error::Precondition(format!("--test: {e}")))?;
    let weak = weak_residual(&st, p, &test)?;

    let mut fields = vec![
        ("n", Json::Int(a.n as i64)),
        ("eta_samples", Json::Int(a.eta_samples as i64)),
        ("seed", Json::Int(a.seed as i64)),
        ("identity_max_relative", Json::Num(worst)),
        ("identity_per_layer", Json::nums(&per_layer)),
        ("weak_test", Json::Str(test_src)),
        ("weak_residual", Json::Num(weak)),
    ];
    if let Some(case) = &ses.cfg.manufactured {
        let err = case.nodal_error(&st)?;
        fields.push(("max_error", Json::Num(err.max)));
        fields.push(("front_error", Json::Num(err.front)));
    }
    ses.write_json("diagnose.json", &Json::obj(fields))?;
    ses.manifest(
        "diagnose",
        &[RunInfo::of(&st)],
        Vec::new(),
        &["diagnose.json"],
    )?;
    Ok(0)
}

fn write_series(ses: &Session, name: &str, s: &SampledSeries) -> Result<()> {
    ses.write(name, |w| {
        writeln!(w, "t,value")?;
        for (t, v) in s.times().iter().zip(s.values()) {
            writeln!(w, "{},{}", fmt_num(*t), fmt_num(*v))?;
        }
        Ok(())
    })
}

fn make_synthetic(a: &SyntheticArgs) -> Result<i32> {
    let ses = Session::open(&a.common)?;
    ses.time(a.n)?;
    let v = ses.reference(a.n)?;
    let st = ForwardSolver::new(ses.problem(), ses.settings)?.solve(&v)?;
    let (nu, mu) = synthetic_measurements(&st, a.noise, a.seed)?;
    write_series(&ses, "nu.csv", &nu)?;
    write_series(&ses, "mu.csv", &mu)?;
    ses.write("control.csv", |w| v.write_csv(w))?;
    ses.manifest(
        "make-synthetic",
        &[RunInfo::of(&st)],
        vec![
            ("noise", Json::Num(a.noise)),
            ("seed", Json::Int(a.seed as i64)),
            (
                "noise_model",
                Json::Str(
                    "traces u_0(k), u_m(k) held on (t_{k-1}, t_k] (interpolation = \"step\"); \
                     Gaussian noise with sd = noise * RMS of each series"
                        .into(),
                ),
            ),
        ],
        &["nu.csv", "mu.csv", "control.csv"],
    )?;
    Ok(0)
}
