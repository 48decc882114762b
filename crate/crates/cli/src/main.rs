//! `gwri`: command-line front end for the random-interlacement percolation
//! library. Every command is a pure function of its arguments and seed.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use gwri::cluster::annealed_survival_profile;
use gwri::fmt::g9;
use gwri::harmonic::{beta_table, gamma_chi_from, profile_csv};
use gwri::solver::{
    critical_u, criticality_index, fixed_point_from, largest_root_bisect, recursion_sequence,
    transform_means, McParams, DEFAULT_MAX_ITER,
};
use gwri::transforms::{sample_chi, transforms_csv};
use gwri::treegen::{sample_backbone, sample_conditioned, sample_unconditioned};
use gwri::validate::{run_suite, SuiteConfig};
use gwri::{ChiSampleSet, Error, Offspring};

#[derive(Parser, Debug)]
#[command(
    name = "gwri",
    version,
    about = "Random-interlacement percolation on Galton-Watson trees"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Offspring law as JSON, e.g. '{"family":"pmf","p":[0.25,0,0.75]}'
    #[arg(
        long,
        global = true,
        default_value = r#"{"family":"pmf","p":[0.25,0,0.75]}"#
    )]
    dist: String,
    /// Master seed
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Truncation depth (lookahead below the target depth for `survival`)
    #[arg(long, global = true, default_value_t = 30)]
    depth: u32,
    /// Monte Carlo sample count (replicas for `survival`)
    #[arg(long, global = true, default_value_t = 100_000)]
    samples: usize,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file (default: standard output)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
    Dot,
    Lines,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TreeKindArg {
    Backbone,
    Conditioned,
    Unconditioned,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extinction probability and backbone offspring law
    Extinction,
    /// Sample one truncated tree
    SampleTree {
        #[arg(long, value_enum, default_value = "conditioned")]
        kind: TreeKindArg,
        /// Level for the site-weight profile written with `--format csv`
        #[arg(long, default_value_t = 1.0)]
        u: f64,
    },
    /// Laplace transforms of chi and gamma over a grid of levels
    Transforms {
        /// Levels as start:stop:step
        #[arg(long, default_value = "0.25:3:0.25")]
        u_grid: String,
        /// Write the chi samples to this file
        #[arg(long)]
        save_samples: Option<PathBuf>,
        /// Read chi samples from this file instead of sampling
        #[arg(long)]
        load_samples: Option<PathBuf>,
    },
    /// Critical level u*
    Critical {
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Independent sample sets used for the spread
        #[arg(long, default_value_t = 8)]
        replicates: usize,
    },
    /// Annealed survival probability as a fixed point
    FixedPoint {
        #[arg(long)]
        u: f64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Simulated probability that the vacant cluster reaches depth n
    Survival {
        #[arg(long)]
        u: f64,
        /// Target depths, comma separated
        #[arg(long, value_delimiter = ',', default_value = "30")]
        n: Vec<u32>,
        /// Also write one row per replica to this file
        #[arg(long)]
        dump_replicas: Option<PathBuf>,
    },
    /// Run the invariant suite
    Validate {
        #[arg(long)]
        quick: bool,
    },
}

enum Failure {
    Config(String),
    Numerical(String),
    Invariant(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NoBracket { .. } | Error::ResourceLimit { .. } => {
                Failure::Numerical(e.to_string())
            }
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// Levels `start, start + step, ...` strictly below `stop + step / 2`.
fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, c] = parts[..] else {
        return Err(format!("grid `{s}` is not start:stop:step"));
    };
    let num = |x: &str| {
        x.trim()
            .parse::<f64>()
            .map_err(|e| format!("grid `{s}`: {e}"))
    };
    let (start, stop, step) = (num(a)?, num(b)?, num(c)?);
    if !(start >= 0.0 && step > 0.0 && stop >= start && stop.is_finite()) {
        return Err(format!("grid `{s}` needs 0 <= start <= stop and step > 0"));
    }
    let count = ((stop - start) / step + 0.5).ceil() as usize;
    if count > 1_000_000 {
        return Err(format!("grid `{s}` has too many points"));
    }
    Ok((0..count)
        .map(|i| start + i as f64 * step)
        .filter(|&u| u < stop + step / 2.0)
        .collect())
}

/// JSON number rounded to nine significant digits.
fn r9(x: f64) -> Value {
    if x.is_finite() {
        json!(g9(x).parse::<f64>().expect("formatted number parses"))
    } else {
        json!(g9(x))
    }
}

fn r9s(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| r9(x)).collect())
}

struct Ctx {
    g: Global,
}

impl Ctx {
    fn dist(&self) -> Result<Offspring, Failure> {
        Ok(Offspring::from_json(&self.g.dist)?)
    }

    fn format(&self, allowed: &[Format], default: Format) -> Result<Format, Failure> {
        match self.g.format {
            None => Ok(default),
            Some(f) if allowed.contains(&f) => Ok(f),
            Some(f) => Err(Failure::Config(format!(
                "format {f:?} is not available for this command"
            ))),
        }
    }

    fn emit(&self, text: &str) -> Outcome {
        match &self.g.out {
            Some(p) => std::fs::write(p, text)?,
            None => io::stdout().lock().write_all(text.as_bytes())?,
        }
        Ok(())
    }

    fn emit_json(&self, v: &Value) -> Outcome {
        self.emit(&format!(
            "{}\n",
            serde_json::to_string_pretty(v).expect("json serializes")
        ))
    }

    fn check_mc(&self) -> Outcome {
        if self.g.depth < 1 {
            return Err(Failure::Config("--depth must be at least 1".into()));
        }
        if self.g.samples < 1 {
            return Err(Failure::Config("--samples must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_level(name: &str, u: f64) -> Outcome {
    if u > 0.0 && u.is_finite() {
        Ok(())
    } else {
        Err(Failure::Config(format!("{name} must be positive, got {u}")))
    }
}

fn cmd_extinction(ctx: &Ctx) -> Outcome {
    let d = ctx.dist()?;
    let rho_tilde: Vec<f64> = d.backbone_pmf().to_vec();
    match ctx.format(&[Format::Json, Format::Csv], Format::Json)? {
        Format::Csv => {
            let mut out = String::from("k,rho,rho_tilde\n");
            let len = d.pmf().len().max(rho_tilde.len() + 1);
            for k in 0..len {
                let rho = d.pmf().get(k).copied().unwrap_or(0.0);
                let rt = if k == 0 {
                    0.0
                } else {
                    rho_tilde.get(k - 1).copied().unwrap_or(0.0)
                };
                out.push_str(&format!("{k},{},{}\n", g9(rho), g9(rt)));
            }
            ctx.emit(&out)
        }
        _ => ctx.emit_json(&json!({
            "dist": serde_json::from_str::<Value>(&d.spec().to_json()).expect("spec is json"),
            "mean": r9(d.mean()),
            "q": r9(d.extinction_probability()),
            "rho_tilde": r9s(&rho_tilde),
            "backbone_mean": r9(d.backbone().mean()),
            "tail_discarded": r9(d.tail_discarded()),
        })),
    }
}

fn cmd_sample_tree(ctx: &Ctx, kind: TreeKindArg, u: f64) -> Outcome {
    ctx.check_mc()?;
    let d = ctx.dist()?;
    let (depth, seed) = (ctx.g.depth, ctx.g.seed);
    let tree = match kind {
        TreeKindArg::Backbone => sample_backbone(d.backbone(), depth, seed)?,
        TreeKindArg::Conditioned => sample_conditioned(&d, depth, seed)?,
        TreeKindArg::Unconditioned => sample_unconditioned(&d, depth, seed)?,
    };
    match ctx.format(
        &[Format::Dot, Format::Lines, Format::Csv, Format::Json],
        Format::Lines,
    )? {
        Format::Dot => ctx.emit(&tree.to_dot()),
        Format::Lines => ctx.emit(&tree.to_lines()),
        Format::Csv => {
            check_level("--u", u)?;
            ctx.emit(&profile_csv(&tree, &beta_table::<f64>(&tree), u)?)
        }
        Format::Json => {
            let table = beta_table::<f64>(&tree);
            let (gamma, chi) = gamma_chi_from(&table, &tree);
            ctx.emit_json(&json!({
                "nodes": tree.len(),
                "backbone_nodes": tree.backbone_count(),
                "depth": depth,
                "height": tree.height(),
                "gamma": r9(gamma),
                "chi": r9(chi),
            }))
        }
    }
}

fn cmd_transforms(
    ctx: &Ctx,
    grid: &str,
    save: Option<&PathBuf>,
    load: Option<&PathBuf>,
) -> Outcome {
    let d = ctx.dist()?;
    let grid = parse_grid(grid).map_err(Failure::Config)?;
    ctx.format(&[Format::Csv], Format::Csv)?;
    let samples = match load {
        Some(p) => {
            let s = ChiSampleSet::read_from(BufReader::new(File::open(p)?))?;
            if s.dist_fingerprint != d.spec().fingerprint() {
                return Err(Failure::Config(
                    "sample file was drawn from a different distribution".into(),
                ));
            }
            s
        }
        None => {
            ctx.check_mc()?;
            sample_chi(&d, ctx.g.samples, ctx.g.depth, ctx.g.seed)?
        }
    };
    if let Some(p) = save {
        let mut w = BufWriter::new(File::create(p)?);
        samples.write_to(&mut w)?;
        w.flush()?;
    }
    ctx.emit(&transforms_csv(&samples, &d, &grid)?)
}

fn cmd_critical(ctx: &Ctx, tol: f64, replicates: usize) -> Outcome {
    ctx.check_mc()?;
    if tol.is_nan() || tol <= 0.0 {
        return Err(Failure::Config(format!(
            "--tol must be positive, got {tol}"
        )));
    }
    if replicates < 1 {
        return Err(Failure::Config("--replicates must be at least 1".into()));
    }
    ctx.format(&[Format::Json], Format::Json)?;
    let d = ctx.dist()?;
    let mc = McParams {
        n: ctx.g.samples,
        depth: ctx.g.depth,
        seed: ctx.g.seed,
        replicates,
    };
    let res = critical_u(&d, tol, mc)?;
    log::info!(
        "bracket [{}, {}], spread {}",
        res.bracket.0,
        res.bracket.1,
        res.spread
    );
    let v = res.to_json();
    let mut out = serde_json::Map::new();
    for (k, val) in v.as_object().expect("object") {
        let val = match val {
            Value::Number(n) if n.is_f64() => r9(n.as_f64().expect("f64")),
            Value::Array(a) if k != "seeds" => Value::Array(
                a.iter()
                    .map(|x| r9(x.as_f64().unwrap_or(f64::NAN)))
                    .collect(),
            ),
            other => other.clone(),
        };
        out.insert(k.clone(), val);
    }
    ctx.emit_json(&Value::Object(out))
}

fn cmd_fixed_point(ctx: &Ctx, u: f64, tol: f64) -> Outcome {
    ctx.check_mc()?;
    check_level("--u", u)?;
    if tol.is_nan() || tol <= 0.0 {
        return Err(Failure::Config(format!(
            "--tol must be positive, got {tol}"
        )));
    }
    let d = ctx.dist()?;
    let fmt = ctx.format(&[Format::Json, Format::Csv], Format::Json)?;
    let samples = sample_chi(&d, ctx.g.samples, ctx.g.depth, ctx.g.seed)?;
    let (lg, lc) = transform_means(&samples, u)?;
    let index = criticality_index(&samples, &d, u)?;
    let fp = fixed_point_from(&d, lg, lc, u, tol, DEFAULT_MAX_ITER)?;
    let cross = if index > 1.05 {
        largest_root_bisect(&d, lg, lc, tol)
    } else {
        None
    };
    match fmt {
        Format::Csv => {
            let seq =
                recursion_sequence(&samples, &d, u, (fp.iterates.len() - 1).min(10_000) as u32)?;
            let mut out = String::from("k,r,recursion_stderr\n");
            for (k, r) in fp.iterates.iter().enumerate() {
                let se = seq.get(k).map(|s| g9(s.stderr)).unwrap_or_default();
                out.push_str(&format!("{k},{},{se}\n", g9(*r)));
            }
            ctx.emit(&out)?;
        }
        _ => ctx.emit_json(&json!({
            "u": r9(u),
            "r": r9(fp.r),
            "converged": fp.converged,
            "iterations": fp.iterates.len() - 1,
            "index": r9(index),
            "L_gamma": r9(lg),
            "L_chi": r9(lc),
            "bisection_r": cross.map(r9),
            "n": samples.n(),
            "depth": samples.depth,
            "seed": ctx.g.seed,
        }))?,
    }
    if fp.converged {
        Ok(())
    } else {
        Err(Failure::Numerical(format!(
            "fixed-point iteration did not converge in {DEFAULT_MAX_ITER} steps"
        )))
    }
}

fn cmd_survival(ctx: &Ctx, u: f64, ns: &[u32], dump: Option<&PathBuf>) -> Outcome {
    ctx.check_mc()?;
    check_level("--u", u)?;
    if ns.is_empty() {
        return Err(Failure::Config("--n needs at least one depth".into()));
    }
    ctx.format(&[Format::Csv], Format::Csv)?;
    let d = ctx.dist()?;
    let run = annealed_survival_profile(&d, u, ns, ctx.g.samples, ctx.g.depth, ctx.g.seed)?;
    if let Some(p) = dump {
        std::fs::write(p, run.replica_csv())?;
    }
    ctx.emit(&run.to_csv())
}

fn cmd_validate(ctx: &Ctx, quick: bool) -> Outcome {
    let fmt = ctx.format(&[Format::Json, Format::Lines], Format::Lines)?;
    let report = run_suite(SuiteConfig {
        quick,
        seed: ctx.g.seed,
    });
    match fmt {
        Format::Json => ctx.emit_json(&Value::Array(
            report
                .checks
                .iter()
                .map(|c| json!({"name": c.name, "passed": c.passed, "detail": c.detail, "seconds": r9(c.seconds)}))
                .collect(),
        ))?,
        _ => ctx.emit(&report.to_text())?,
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Invariant("invariant suite failed".into()))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(t) = cli.global.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let ctx = Ctx { g: cli.global };
    let outcome = match &cli.command {
        Command::Extinction => cmd_extinction(&ctx),
        Command::SampleTree { kind, u } => cmd_sample_tree(&ctx, *kind, *u),
        Command::Transforms {
            u_grid,
            save_samples,
            load_samples,
        } => cmd_transforms(&ctx, u_grid, save_samples.as_ref(), load_samples.as_ref()),
        Command::Critical { tol, replicates } => cmd_critical(&ctx, *tol, *replicates),
        Command::FixedPoint { u, tol } => cmd_fixed_point(&ctx, *u, *tol),
        Command::Survival {
            u,
            n,
            dump_replicas,
        } => cmd_survival(&ctx, *u, n, dump_replicas.as_ref()),
        Command::Validate { quick } => cmd_validate(&ctx, *quick),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Invariant(m)) => {
            eprintln!("{m}");
            ExitCode::from(4)
        }
    }
}
