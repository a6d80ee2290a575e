use clap::{Args, Parser, Subcommand};
use glvortex::dynamics::{continuity_residual, plateau, product_estimate_check, space_time_current, space_vorticity, translating_vortex, SpaceTimeField};
use glvortex::field::{load_glf3, save_glf3, synth_field, LatticeField3, SynthKind, SynthParams};
use glvortex::geom::V3;
use glvortex::lower_bound::{theorem1_report, CertParams, ReportConfig};
use glvortex::report::{analyze, canonical, canonical_full, lower_bound_json, verify, version_string, FORMAT_VERSION};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "glvortex", version, about = "Vortex currents and energy certificates for sampled Ginzburg-Landau fields")]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat key=value file; command-line flags win over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a fixture field (GLF3) and its ground-truth filaments.
    Synth(SynthArgs),
    /// Full pipeline report.
    Analyze(PipelineArgs),
    /// Certificates only.
    LowerBound(PipelineArgs),
    /// Space-time vorticity, transport residual and product estimate.
    Dynamics(DynArgs),
    /// Replay a report against its field.
    Verify { report: PathBuf, field: PathBuf },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    kind: Option<String>,
    /// N or N,N,N.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    /// Lattice spacing; default 1/(max dim − 1).
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    pitch: Option<f64>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    ball_radius: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON; default <out>.truth.json.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    field: PathBuf,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Hölder exponent of the norm estimate.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    gamma_slice: Option<f64>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c_grid: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include wall-clock timings in the output.
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct DynArgs {
    /// Space-time field (axis 0 = time); a translating vortex is synthesized when omitted.
    field: Option<PathBuf>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    speed: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Λ in the product estimate; balanced when omitted.
    #[arg(long = "big-lambda")]
    big_lambda: Option<f64>,
    #[arg(long = "c")]
    c_const: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Fail {
    Config(String),
    Pipeline(String),
}

impl From<glvortex::Error> for Fail {
    fn from(e: glvortex::Error) -> Self {
        let mut msg = e.to_string();
        let mut src: Option<&dyn std::error::Error> = std::error::Error::source(&e);
        while let Some(s) = src {
            msg.push_str(&format!(": {s}"));
            src = s.source();
        }
        Fail::Pipeline(msg)
    }
}

/// Layered parameters: flag, then config file, then default.
struct Params {
    file: BTreeMap<String, String>,
}

impl Params {
    fn load(path: Option<&Path>) -> Result<Self, Fail> {
        let mut file = BTreeMap::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Fail::Config(format!("{}: {e}", p.display())))?;
            for (n, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap().trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| Fail::Config(format!("{}:{}: expected key=value", p.display(), n + 1)))?;
                file.insert(k.trim().replace('-', "_"), v.trim().to_string());
            }
        }
        Ok(Params { file })
    }

    fn get<T: std::str::FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, Fail> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|_| Fail::Config(format!("bad value for {key}: {s}"))),
        }
    }

    fn positive(&self, key: &str, flag: Option<f64>) -> Result<Option<f64>, Fail> {
        match self.get(key, flag)? {
            Some(v) if !(v > 0.0 && v.is_finite()) => Err(Fail::Config(format!("{key} must be positive, got {v}"))),
            v => Ok(v),
        }
    }

    fn required(&self, key: &str, flag: Option<f64>) -> Result<f64, Fail> {
        self.positive(key, flag)?.ok_or_else(|| Fail::Config(format!("missing --{}", key.replace('_', "-"))))
    }
}

fn parse_dims(s: &str) -> Result<[usize; 3], Fail> {
    let v: Vec<usize> = s.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>().map_err(|_| Fail::Config(format!("bad dims {s}")))?;
    match v[..] {
        [n] if n >= 2 => Ok([n; 3]),
        [a, b, c] if a >= 2 && b >= 2 && c >= 2 => Ok([a, b, c]),
        _ => Err(Fail::Config(format!("dims must be N or N,N,N with N >= 2, got {s}"))),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Fail> {
    match out {
        Some(p) => std::fs::write(p, format!("{text}\n")).map_err(|e| Fail::Pipeline(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load(p: &Path) -> Result<LatticeField3, Fail> {
    load_glf3(p).map_err(|e| Fail::Pipeline(format!("{}: {e}", p.display())))
}

fn synth(a: SynthArgs, ps: &Params) -> Result<(), Fail> {
    let kind: SynthKind = ps
        .get::<String>("kind", a.kind)?
        .ok_or_else(|| Fail::Config("missing --kind".into()))?
        .parse()
        .map_err(|e: glvortex::Error| Fail::Config(e.to_string()))?;
    let dims = parse_dims(&ps.get::<String>("dims", a.dims)?.ok_or_else(|| Fail::Config("missing --dims".into()))?)?;
    let eps = ps.required("eps", a.eps)?;
    let h = ps.positive("h", a.h)?.unwrap_or(1.0 / (*dims.iter().max().unwrap() - 1) as f64);
    let mut sp = SynthParams::default();
    if let Some(r) = ps.positive("radius", a.radius)? {
        sp.radius = r;
    }
    if let Some(p) = ps.positive("pitch", a.pitch)? {
        sp.pitch = p;
    }
    if let Some(s) = ps.positive("separation", a.separation)? {
        sp.separation = s;
    }
    sp.ball_radius = ps.positive("ball_radius", a.ball_radius)?;
    let (field, fils) = synth_field(kind, &sp, dims, h, eps).map_err(|e| Fail::Config(e.to_string()))?;
    save_glf3(&field, &a.out)?;
    let truth = a.truth.unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".truth.json");
        s.into()
    });
    let doc = json!({"filaments": fils, "kind": kind, "eps": eps, "h": h, "dims": dims, "version": version_string()});
    emit(Some(&truth), &canonical_full(&doc))
}

fn report_config(a: &PipelineArgs, ps: &Params) -> Result<(f64, ReportConfig), Fail> {
    let eps = ps.required("eps", a.eps)?;
    let delta = ps.required("delta", a.delta)?;
    let mut cfg = ReportConfig::new(delta, ps.get("seed", a.seed)?.unwrap_or(0));
    if let Some(t) = ps.get("trials", a.trials)? {
        if t == 0 {
            return Err(Fail::Config("trials must be positive".into()));
        }
        cfg.trials = t;
    }
    if let Some(g) = ps.positive("gamma", a.gamma)? {
        cfg.gamma = g;
    }
    if let Some(c) = ps.positive("c_grid", a.c_grid)? {
        cfg.c_grid = c;
    }
    cfg.cert = CertParams {
        lambda: ps.positive("lambda", a.lambda)?,
        kappa: ps.positive("kappa", a.kappa)?,
        rho: ps.positive("rho", a.rho)?.unwrap_or(6.0 / 21.0),
        gamma_slice: ps.positive("gamma_slice", a.gamma_slice)?,
        c1: ps.positive("c1", a.c1)?.unwrap_or(1.0),
        ..CertParams::default()
    };
    Ok((eps, cfg))
}

fn pipeline(a: PipelineArgs, ps: &Params, certs_only: bool) -> Result<(), Fail> {
    let (eps, cfg) = report_config(&a, ps)?;
    let field = load(&a.field)?;
    let v = if certs_only {
        lower_bound_json(&theorem1_report(&field, eps, &cfg)?, &cfg)
    } else {
        analyze(&field, eps, &cfg)?
    };
    emit(a.out.as_deref(), &if a.timings { canonical_full(&v) } else { canonical(&v) })
}

fn dynamics(a: DynArgs, ps: &Params) -> Result<(), Fail> {
    let eps = ps.required("eps", a.eps)?;
    let stf = match &a.field {
        Some(p) => SpaceTimeField::new(load(p)?)?,
        None => {
            let dims = parse_dims(&ps.get::<String>("dims", a.dims.clone())?.unwrap_or_else(|| "33".into()))?;
            let h = 1.0 / (dims[1].max(dims[2]) - 1) as f64;
            let c = ps.get("speed", a.speed)?.unwrap_or(0.5);
            translating_vortex(dims, h, eps, [0.4, 0.5], [c, 0.0], 1)?.0
        }
    };
    let h = stf.field.h;
    let d = stf.dims();
    let delta = ps.positive("delta", a.delta)?.unwrap_or(8.0 * h);
    let seed = ps.get("seed", a.seed)?.unwrap_or(0);
    let j = space_vorticity(&stf);
    let res = continuity_residual(&stf)?;
    let nu = space_time_current(&stf, eps, delta, 200, seed)?;
    let hi: V3 = [0, 1, 2].map(|k| stf.field.origin[k] + (d[k] - 1) as f64 * h);
    let lo = stf.field.origin;
    let ramp = |k: usize| 0.1 * (hi[k] - lo[k]);
    let f = |x: V3| (0..3).map(|k| plateau(x[k], lo[k] + ramp(k), hi[k] - ramp(k), ramp(k))).product::<f64>();
    let xf = |x: V3| if f(x) > 0.0 { [1.0, 0.0] } else { [0.0, 0.0] };
    let prod = product_estimate_check(&stf, &f, &xf, ps.positive("big_lambda", a.big_lambda)?, eps, &nu, ps.positive("c", a.c_const)?.unwrap_or(1.0))?;
    let doc = json!({
        "format_version": FORMAT_VERSION,
        "version": version_string(),
        "seed": seed,
        "config": {"eps": eps, "delta": delta},
        "slice_flux": j.slice_integrals(),
        "continuity": {"l1": res.l1, "max": res.max, "j_l1": res.j_l1, "l1_per_slice": res.l1_per_slice},
        "current_mass": nu.total_mass(),
        "product": serde_json::to_value(&prod).unwrap_or(Value::Null),
    });
    emit(a.out.as_deref(), &canonical(&doc))
}

fn run_verify(report: &Path, field: &Path) -> Result<(), Fail> {
    let text = std::fs::read_to_string(report).map_err(|e| Fail::Config(format!("{}: {e}", report.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Fail::Config(format!("{}: {e}", report.display())))?;
    let out = verify(&v, &load(field)?)?;
    for (name, ok) in &out.checks {
        println!("{} {name}", if *ok { "ok  " } else { "FAIL" });
    }
    if out.ok() {
        Ok(())
    } else {
        Err(Fail::Pipeline("verification failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("error: bad --threads {n}");
            return ExitCode::from(2);
        }
    }
    let res = Params::load(cli.config.as_deref()).and_then(|ps| match cli.cmd {
        Cmd::Synth(a) => synth(a, &ps),
        Cmd::Analyze(a) => pipeline(a, &ps, false),
        Cmd::LowerBound(a) => pipeline(a, &ps, true),
        Cmd::Dynamics(a) => dynamics(a, &ps),
        Cmd::Verify { report, field } => run_verify(&report, &field),
    });
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Fail::Pipeline(m)) => {
            eprintln!("pipeline error: {m}");
            ExitCode::from(3)
        }
    }
}
