use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use vortexlab::algebra::{estimate_bound_constant, verify_bound_constant, CentralParameter, Representation};
use vortexlab::analysis::{embedding_check, multiplication_check, phi_l2_identity, pointwise_bound, SobolevIndex};
use vortexlab::compactness::{
    bubbling_family, frame_measures, sequence_limit, Bubble, Frame, SequenceOptions,
};
use vortexlab::energy::{seed_pair, solve, ymh_density, ymh_total, MinimizeOptions};
use vortexlab::fields::{load_snapshot, save_snapshot, vortex_residuals, Pair, TwistData};
use vortexlab::gaugefix::{coulomb_gauge, local_energy_bound_check};
use vortexlab::lattice::{write_csv, DiscreteForm, KaehlerTorus, ValueKind};

#[derive(Parser)]
#[command(name = "vortexlab", version, about = "Lattice ρ-vortex laboratory on the flat 4-torus")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    target_eps: Option<f64>,
    /// Worker threads; falls back to VORTEXLAB_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize from a seeded start and report the solution.
    Solve,
    /// Energy report of a snapshot.
    Energy {
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Coulomb gauge fixing of a snapshot.
    Gaugefix {
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Norm identity, pointwise bounds and local energy bound at a solution.
    VerifyBounds {
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Sampled embedding and multiplication constants.
    SobolevCheck,
    /// Concentration analysis of a sequence manifest.
    Sequence {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Sampled constant of |φ|² ≤ C|μ(φ) − τ|.
    Constants,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Energy { .. } => "energy",
            Command::Gaugefix { .. } => "gaugefix",
            Command::VerifyBounds { .. } => "verify-bounds",
            Command::SobolevCheck => "sobolev-check",
            Command::Sequence { .. } => "sequence",
            Command::Constants => "constants",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    seed: u64,
    lattice: LatticeConfig,
    group: GroupConfig,
    tau: TauConfig,
    twist: TwistConfig,
    solver: SolverConfig,
    output: OutputConfig,
    input: InputConfig,
    gaugefix: GaugefixConfig,
    sampling: SamplingConfig,
    sequence: SequenceConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct LatticeConfig {
    n: usize,
    l: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GroupConfig {
    representation: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TauConfig {
    /// Coefficients in the centre basis.
    components: Vec<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TwistConfig {
    /// Antisymmetric integer flux matrix; zero when absent.
    matrix: Option<[[i64; 4]; 4]>,
    /// Shorthand: flux a in the (x¹,x²) face and b in the (x³,x⁴) face.
    planar: Option<[i64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SolverConfig {
    eps: f64,
    max_iter: usize,
    /// Amplitude of the seeded perturbation of the starting pair.
    noise: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct OutputConfig {
    dir: PathBuf,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct InputConfig {
    snapshot: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GaugefixConfig {
    tol: f64,
    max_iter: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SamplingConfig {
    /// Samples for the bound constant.
    constant_samples: usize,
    /// Samples for the Sobolev suites.
    sobolev_samples: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SequenceConfig {
    manifest: Option<PathBuf>,
    epsilon: f64,
    tol: f64,
    /// Without a manifest: write and analyse the bubbling fixture built on
    /// the configured solution.
    widths: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            lattice: LatticeConfig::default(),
            group: GroupConfig::default(),
            tau: TauConfig::default(),
            twist: TwistConfig::default(),
            solver: SolverConfig::default(),
            output: OutputConfig::default(),
            input: InputConfig::default(),
            gaugefix: GaugefixConfig::default(),
            sampling: SamplingConfig::default(),
            sequence: SequenceConfig::default(),
        }
    }
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig { n: 8, l: 1.0 }
    }
}

impl Default for GroupConfig {
    fn default() -> Self {
        GroupConfig {
            representation: "u1:1".into(),
        }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eps: 1e-6,
            max_iter: 20_000,
            noise: 0.0,
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "vortexlab-out".into() }
    }
}

impl Default for GaugefixConfig {
    fn default() -> Self {
        GaugefixConfig { tol: 1e-10, max_iter: 100 }
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            constant_samples: 100_000,
            sobolev_samples: 1000,
        }
    }
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            manifest: None,
            epsilon: vortexlab::compactness::DEFAULT_EPSILON,
            tol: 0.05,
            widths: vec![0.2, 0.1, 0.05],
        }
    }
}

/// One frame of a sequence manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestFrame {
    snapshot: PathBuf,
    #[serde(default)]
    bubbles: Vec<Bubble>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SequenceManifest {
    frames: Vec<ManifestFrame>,
}

#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
    code: u8,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Failure {
            kind: "config",
            message: message.to_string(),
            code: 2,
        }
    }
    fn run(message: impl ToString) -> Self {
        Failure {
            kind: "run",
            message: message.to_string(),
            code: 1,
        }
    }
}

type Res<T> = Result<T, Failure>;

fn run_err<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> Failure + '_ {
    move |e| Failure::run(format!("{context}: {e}"))
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn rep(&self) -> Res<Arc<Representation>> {
        Representation::parse(&self.cfg.group.representation)
            .map(Arc::new)
            .map_err(Failure::config)
    }

    fn torus(&self) -> Res<KaehlerTorus> {
        KaehlerTorus::new(self.cfg.lattice.n, self.cfg.lattice.l).map_err(Failure::config)
    }

    fn twist(&self) -> Res<TwistData> {
        match (&self.cfg.twist.matrix, &self.cfg.twist.planar) {
            (Some(_), Some(_)) => Err(Failure::config("twist: give either `matrix` or `planar`")),
            (Some(m), None) => TwistData::new(*m).map_err(Failure::config),
            (None, Some([a, b])) => Ok(TwistData::planar(*a, *b)),
            (None, None) => Ok(TwistData::trivial()),
        }
    }

    fn tau(&self, rep: &Representation) -> Res<CentralParameter> {
        let c = &self.cfg.tau.components;
        let dim = rep.group.center.len();
        if c.is_empty() {
            return Ok(CentralParameter::new(rep, &vec![0.0; dim]));
        }
        if c.len() != dim {
            return Err(Failure::config(format!("tau: {} components for a centre of dimension {dim}", c.len())));
        }
        Ok(CentralParameter::new(rep, c))
    }

    fn write_json(&self, name: &str, v: &Value) -> Res<PathBuf> {
        let path = self.out.join(name);
        let text = serde_json::to_string_pretty(v).map_err(run_err("json"))?;
        std::fs::write(&path, text + "\n").map_err(run_err("write"))?;
        Ok(path)
    }

    fn write_density(&self, name: &str, torus: &KaehlerTorus, density: &DiscreteForm) -> Res<()> {
        let f = std::fs::File::create(self.out.join(name)).map_err(run_err("write"))?;
        write_csv(std::io::BufWriter::new(f), torus, density).map_err(run_err("csv"))
    }

    fn load(&self, flag: &Option<PathBuf>) -> Res<Option<(Pair, CentralParameter)>> {
        let Some(path) = flag.as_ref().or(self.cfg.input.snapshot.as_ref()) else {
            return Ok(None);
        };
        let (pair, coeffs) = load_snapshot(path).map_err(run_err("snapshot"))?;
        let tau = CentralParameter::new(&pair.rep, &coeffs);
        Ok(Some((pair, tau)))
    }

    fn options(&self) -> MinimizeOptions {
        MinimizeOptions {
            target_eps: self.cfg.solver.eps,
            max_iter: self.cfg.solver.max_iter,
            ..MinimizeOptions::default()
        }
    }

    /// Solves from the configured start; returns the solution and its report.
    fn solve(&self) -> Res<(Pair, CentralParameter, Value)> {
        let rep = self.rep()?;
        let tau = self.tau(&rep)?;
        let start = seed_pair(self.torus()?, rep, self.twist()?, &tau, self.cfg.seed, self.cfg.solver.noise)
            .map_err(run_err("seed"))?;
        let s = solve(&start, &tau, &self.options()).map_err(run_err("solve"))?;
        let o = &s.outcome;
        let energy = ymh_total(&o.pair, &tau).map_err(run_err("energy"))?;
        let identity = if tau.norm_sqr() > 0.0 {
            phi_l2_identity(&o.pair, &tau, &tau, self.cfg.solver.eps).ok()
        } else {
            None
        };
        let report = json!({
            "branch": s.branch,
            "threshold": s.threshold,
            "termination": o.termination,
            "iterations": o.iterations,
            "residuals": o.norms,
            "phi_max": o.pair.phi.max_abs(),
            "phi_l2": o.pair.phi.norm_l2(&o.pair.torus),
            "energy": energy,
            "norm_identity": identity,
        });
        let mut trace = String::new();
        for t in &o.trace {
            trace.push_str(&serde_json::to_string(t).map_err(run_err("json"))?);
            trace.push('\n');
        }
        std::fs::write(self.out.join("trace.jsonl"), trace).map_err(run_err("write"))?;
        Ok((o.pair.clone(), tau, report))
    }

    fn snapshot(&self, stem: &str, pair: &Pair, tau: &CentralParameter) -> Res<PathBuf> {
        save_snapshot(&self.out, stem, pair, &tau.coeffs).map_err(run_err("snapshot"))
    }
}

fn density_form(torus: &KaehlerTorus, values: &[f64]) -> DiscreteForm {
    let mut f = DiscreteForm::zeros(torus, 0, ValueKind::Real, 1);
    for (z, v) in f.data.iter_mut().zip(values) {
        z.re = *v;
    }
    f
}

fn execute(cmd: &Command, ctx: &Ctx) -> Res<Value> {
    let cfg = &ctx.cfg;
    match cmd {
        Command::Solve => {
            let (pair, tau, report) = ctx.solve()?;
            ctx.write_density("density.csv", &pair.torus, &ymh_density(&pair, &tau).map_err(run_err("density"))?)?;
            ctx.snapshot("solution", &pair, &tau)?;
            Ok(report)
        }
        Command::Energy { snapshot } => {
            let (pair, tau) = ctx.load(snapshot)?.ok_or_else(|| Failure::config("energy needs a snapshot"))?;
            let energy = ymh_total(&pair, &tau).map_err(run_err("energy"))?;
            let residuals = vortex_residuals(&pair, &tau).map_err(run_err("residuals"))?;
            ctx.write_density("density.csv", &pair.torus, &ymh_density(&pair, &tau).map_err(run_err("density"))?)?;
            Ok(json!({ "energy": energy, "residuals": residuals.norms }))
        }
        Command::Gaugefix { snapshot, tol, max_iter } => {
            let (pair, tau) = ctx.load(snapshot)?.ok_or_else(|| Failure::config("gaugefix needs a snapshot"))?;
            let r = coulomb_gauge(
                &pair,
                tol.unwrap_or(cfg.gaugefix.tol),
                max_iter.unwrap_or(cfg.gaugefix.max_iter),
            )
            .map_err(run_err("gaugefix"))?;
            ctx.snapshot("coulomb", &r.pair, &tau)?;
            Ok(serde_json::to_value(&r).map_err(run_err("json"))?)
        }
        Command::VerifyBounds { snapshot } => {
            let (pair, tau, solve_report) = match ctx.load(snapshot)? {
                Some((p, t)) => (p, t, Value::Null),
                None => ctx.solve()?,
            };
            let eps = cfg.solver.eps;
            let identity = phi_l2_identity(&pair, &tau, &tau, eps).map_err(run_err("norm identity"))?;
            let pointwise = pointwise_bound(&pair, &tau, 0.01, cfg.seed).map_err(run_err("pointwise"))?;
            let local = local_energy_bound_check(&pair, &tau, cfg.gaugefix.tol, None).map_err(run_err("local bound"))?;
            Ok(json!({
                "solve": solve_report,
                "norm_identity": identity,
                "pointwise": pointwise,
                "local_energy": local,
            }))
        }
        Command::SobolevCheck => {
            let torus = ctx.torus()?;
            let seeds = [cfg.seed, cfg.seed.wrapping_add(1)];
            let n = cfg.sampling.sobolev_samples;
            let l21 = SobolevIndex::new(1, 2.0).map_err(Failure::config)?;
            let l4 = SobolevIndex::new(0, 4.0).map_err(Failure::config)?;
            let l2 = SobolevIndex::new(0, 2.0).map_err(Failure::config)?;
            let emb = embedding_check(&torus, l21, l4, n, seeds).map_err(run_err("embedding"))?;
            let mul = multiplication_check(&torus, l21, l21, l2, n, seeds).map_err(run_err("multiplication"))?;
            Ok(json!({ "embedding_l21_l4": emb, "multiplication_l21_l21_l2": mul }))
        }
        Command::Sequence { manifest } => {
            let path = match manifest.as_ref().or(cfg.sequence.manifest.as_ref()) {
                Some(p) => p.clone(),
                None => write_fixture(ctx)?,
            };
            let text = std::fs::read_to_string(&path).map_err(run_err("manifest"))?;
            let m: SequenceManifest = serde_json::from_str(&text).map_err(Failure::config)?;
            let dir = path.parent().unwrap_or(Path::new("."));
            let mut frames = Vec::new();
            let mut tau = None;
            for f in &m.frames {
                let (pair, t) = load_snapshot(&dir.join(&f.snapshot)).map_err(run_err("snapshot"))?;
                tau.get_or_insert_with(|| CentralParameter::new(&pair.rep, &t));
                frames.push(Frame {
                    pair,
                    bubbles: f.bubbles.clone(),
                });
            }
            let tau = tau.ok_or_else(|| Failure::config("manifest has no frames"))?;
            for (k, m) in frame_measures(&frames, &tau).map_err(run_err("density"))?.iter().enumerate() {
                ctx.write_density(&format!("frame{k}.density.csv"), &m.torus, &density_form(&m.torus, &m.density))?;
            }
            let opts = SequenceOptions {
                epsilon: cfg.sequence.epsilon,
                vortex_eps: cfg.solver.eps,
                tol: cfg.sequence.tol,
                coulomb_tol: cfg.gaugefix.tol,
                coulomb_max_iter: cfg.gaugefix.max_iter,
            };
            let ideal = sequence_limit(&frames, &tau, &opts).map_err(run_err("sequence"))?;
            Ok(serde_json::to_value(&ideal).map_err(run_err("json"))?)
        }
        Command::Constants => {
            let rep = ctx.rep()?;
            let tau = ctx.tau(&rep)?;
            let c = estimate_bound_constant(&rep, &tau, cfg.sampling.constant_samples, cfg.seed).map_err(run_err("constants"))?;
            let v = verify_bound_constant(&rep, &tau, c.value, cfg.sampling.constant_samples, cfg.seed.wrapping_add(1));
            Ok(json!({ "constant": c, "fresh": v }))
        }
    }
}

/// Solves the configured problem and writes a manifest of frames that
/// carry a charge-one lump of shrinking width at the centre of the torus.
fn write_fixture(ctx: &Ctx) -> Res<PathBuf> {
    let (pair, tau, _) = ctx.solve()?;
    let snap = ctx.snapshot("base", &pair, &tau)?;
    let l = pair.torus.l;
    let frames = bubbling_family(&pair, [0.5 * l; 4], &ctx.cfg.sequence.widths.iter().map(|w| w * l).collect::<Vec<_>>(), 1);
    let manifest = SequenceManifest {
        frames: frames
            .iter()
            .map(|f| ManifestFrame {
                snapshot: PathBuf::from(snap.file_name().unwrap()),
                bubbles: f.bubbles.clone(),
            })
            .collect(),
    };
    let path = ctx.out.join("sequence.manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(run_err("json"))?;
    std::fs::write(&path, text).map_err(run_err("write"))?;
    Ok(path)
}

fn setup(cli: &Cli) -> Res<Ctx> {
    let mut cfg: RunConfig = match &cli.global.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    if let Some(e) = cli.global.target_eps {
        cfg.solver.eps = e;
    }
    if let Some(o) = &cli.global.out {
        cfg.output.dir = o.clone();
    }
    let threads = match cli.global.threads {
        Some(t) => Some(t),
        None => match std::env::var("VORTEXLAB_THREADS") {
            Ok(v) => Some(v.parse().map_err(|_| Failure::config(format!("VORTEXLAB_THREADS = {v:?}")))?),
            Err(_) => None,
        },
    };
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(Failure::config)?;
    }
    std::fs::create_dir_all(&cfg.output.dir).map_err(|e| Failure::config(format!("{}: {e}", cfg.output.dir.display())))?;
    Ok(Ctx {
        out: cfg.output.dir.clone(),
        cfg,
    })
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let name = cli.command.name();
    let result = setup(&cli).and_then(|ctx| {
        let report = execute(&cli.command, &ctx)?;
        let full = json!({ "subcommand": name, "seed": ctx.cfg.seed, "config": ctx.cfg, "report": report });
        ctx.write_json(&format!("{name}.json"), &full)?;
        Ok(full)
    });
    match result {
        Ok(v) => {
            emit(&serde_json::to_string(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(f) => {
            let v = json!({ "subcommand": name, "error": f.kind, "message": f.message });
            emit(&v.to_string());
            ExitCode::from(f.code)
        }
    }
}

fn emit(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}
