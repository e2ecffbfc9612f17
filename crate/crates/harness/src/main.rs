use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sgdlab::compare::compare_optimizers;
use sgdlab::config::{resolve_data_dir, ExperimentConfig, Overrides};
use sgdlab::experiment::{prepare, read_trace_csv, run_experiment, write_json, RunEnv};
use sgdlab::scenario::{run_quartic, QuarticBaseline, QuarticCase, QuarticScenario};
use sgdlab_core::bounds::{BoundInputs, Regime};
use sgdlab_core::ingest::{read_libsvm_file, LabelMap, ParseOptions};

#[derive(Parser)]
#[command(name = "sgdlab", version, about = "SGD experiments on finite-sum objectives")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding datasets; falls back to SGD_LAB_DATA.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Output directory (or file, for commands producing one CSV).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long, global = true)]
    batch: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<f64>,
}

impl Global {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            eta: self.eta,
            batch: self.batch,
            epochs: self.epochs,
        }
    }

    fn env(&self) -> RunEnv {
        RunEnv { data_dir: resolve_data_dir(self.data_dir.as_deref()) }
    }

    fn load(&self, path: &Path) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(path)?;
        cfg.apply(&self.overrides());
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment and write traces, census and report.
    Run { config: PathBuf },
    /// Solve for the reference point and print its gradient census.
    Census { config: PathBuf },
    /// Evaluate a bound curve as CSV.
    Bounds(BoundsArgs),
    /// Run several configs on one problem; CSV of F-gaps keyed by evaluations.
    Compare {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
    /// Planted quartic scenario.
    Quartic(QuarticArgs),
    /// Parse a LIBSVM file and print its shape.
    ParseCheck {
        file: PathBuf,
        /// Label mapping such as `1:1,2:-1`.
        #[arg(long)]
        label_map: Option<String>,
    },
    /// Print a config with every default spelled out.
    ConfigSchema,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, value_parser = parse_regime)]
    regime: Regime,
    /// JSON file with the inputs; flags below override its fields.
    #[arg(long)]
    inputs: Option<PathBuf>,
    #[arg(long)]
    l: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    p_eps: Option<f64>,
    #[arg(long)]
    m_eps: Option<f64>,
    #[arg(long)]
    dist0_sq: Option<f64>,
    #[arg(long)]
    f_gap: Option<f64>,
    #[arg(long)]
    n_drift: Option<f64>,
    /// Take the time points from the `t` column of a trace CSV.
    #[arg(long, conflicts_with = "t_max")]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 1000.0)]
    t_max: f64,
    #[arg(long, default_value_t = 11)]
    points: usize,
}

#[derive(Args)]
struct QuarticArgs {
    #[arg(long)]
    case: QuarticCase,
    /// JSON scenario overriding the defaults.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    noiseless: bool,
    /// Measure both cases and store the result as the regression baseline.
    #[arg(long)]
    write_baseline: bool,
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    match s {
        "strongly_convex" | "strongly-convex" => Ok(Regime::StronglyConvex),
        "convex" => Ok(Regime::Convex),
        "nonconvex" => Ok(Regime::Nonconvex),
        _ => Err(format!("unknown regime `{s}`")),
    }
}

fn parse_label_map(s: &str) -> Result<LabelMap> {
    let pairs = s
        .split(',')
        .map(|pair| {
            let (raw, mapped) = pair.split_once(':').with_context(|| format!("bad label pair `{pair}`"))?;
            Ok((raw.trim().parse()?, mapped.trim().parse()?))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    Ok(LabelMap::Explicit(pairs))
}

fn write_output(out: Option<&Path>, text: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => Ok(std::io::stdout().write_all(text)?),
    }
}

fn bounds(args: &BoundsArgs, g: &Global) -> Result<()> {
    let mut inputs = match &args.inputs {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => BoundInputs::new(f64::NAN, f64::NAN, f64::NAN, f64::NAN),
    };
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut inputs.l, args.l);
    set(&mut inputs.eta, g.eta);
    set(&mut inputs.epsilon, args.epsilon);
    set(&mut inputs.p_eps, args.p_eps);
    if let Some(b) = g.batch {
        inputs.batch = b;
    }
    inputs.mu = args.mu.or(inputs.mu);
    inputs.m_eps = args.m_eps.or(inputs.m_eps);
    inputs.dist0_sq = args.dist0_sq.or(inputs.dist0_sq);
    inputs.f_gap = args.f_gap.or(inputs.f_gap);
    inputs.n_drift = args.n_drift.or(inputs.n_drift);
    for (name, v) in [("l", inputs.l), ("eta", inputs.eta), ("epsilon", inputs.epsilon), ("p_eps", inputs.p_eps)] {
        if v.is_nan() {
            bail!("missing --{name}");
        }
    }

    let ts: Vec<f64> = match &args.trace {
        Some(path) => read_trace_csv(path)?.iter().map(|r| r.t as f64).collect(),
        None if args.points < 2 => vec![args.t_max],
        None => (0..args.points).map(|k| args.t_max * k as f64 / (args.points - 1) as f64).collect(),
    };
    let r = args.regime;
    match r.asymptote(&inputs) {
        Ok(a) => eprintln!("asymptote: {a:e}"),
        Err(e) => eprintln!("asymptote: {e}"),
    }
    match r.horizon(&inputs) {
        Ok(h) => eprintln!("horizon: t = {:e}, plateau = {:e}", h.t, h.plateau),
        Err(e) => eprintln!("horizon: {e}"),
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "bound", "simplified_bound"])?;
    let cell = |v: Result<f64, _>| v.map(|x: f64| format!("{x:e}")).unwrap_or_default();
    for t in ts {
        w.write_record([t.to_string(), cell(r.bound(&inputs, t)), cell(r.simplified_bound(&inputs, t))])?;
    }
    write_output(g.out.as_deref(), &w.into_inner()?)
}

fn quartic(args: &QuarticArgs, g: &Global) -> Result<()> {
    let mut scenario = match &args.scenario {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => QuarticScenario::default(),
    };
    scenario.noiseless |= args.noiseless;
    if let Some(b) = g.batch {
        scenario.batch = b;
    }
    let seed = g.seed.unwrap_or(0);
    if args.write_baseline {
        let path = g.out.clone().unwrap_or_else(QuarticBaseline::default_path);
        let baseline = QuarticBaseline::measure(&scenario, seed)?;
        baseline.save(&path)?;
        println!("{}", serde_json::to_string_pretty(&baseline)?);
        eprintln!("baseline written to {}", path.display());
        return Ok(());
    }
    let report = run_quartic(&scenario, args.case, seed)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    write_output(g.out.as_deref(), text.as_bytes())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let g = &cli.global;
    match &cli.command {
        Command::Run { config } => {
            let cfg = g.load(config)?;
            let report = run_experiment(&cfg, &g.env())?;
            print!("{}", sgdlab::experiment::render_table(&report));
            for s in report.seeds.iter().filter(|s| s.error.is_some()) {
                eprintln!("seed {} failed: {}", s.seed, s.error.as_deref().unwrap_or(""));
            }
            eprintln!("wrote {}", report.out_dir.display());
        }
        Command::Census { config } => {
            let cfg = g.load(config)?;
            let prep = prepare(&cfg, &g.env())?;
            fs::create_dir_all(&cfg.out_dir)?;
            let path = cfg.out_dir.join("census.json");
            write_json(
                &path,
                &serde_json::json!({ "census": &prep.census, "epsilon_condition": &prep.condition }),
            )?;
            println!("reference: F = {:.12e}, ||grad F|| = {:.3e}", prep.reference.f_value, prep.reference.grad_norm);
            println!("{:>10}  {:>10}  {:>12}", "eps", "p", "M_eps");
            for e in &prep.census.entries {
                let m = e.m_eps.map(|m| format!("{m:.4e}")).unwrap_or_else(|| "-".into());
                println!("{:>10.0e}  {:>9.4}%  {:>12}", e.epsilon, 100.0 * e.p, m);
            }
            println!("M_max = {:.4e}", prep.census.m_max);
            match prep.condition.epsilon() {
                Some(eps) => println!("smallest eps with 1 - p <= eps: {eps:e}"),
                None => println!("no grid eps satisfies 1 - p <= eps"),
            }
        }
        Command::Bounds(args) => bounds(args, g)?,
        Command::Compare { configs } => {
            let cfgs = configs.iter().map(|p| g.load(p)).collect::<Result<Vec<_>>>()?;
            let data_dir = resolve_data_dir(g.data_dir.as_deref());
            let cmp = compare_optimizers(&cfgs, data_dir.as_deref())?;
            let mut buf = Vec::new();
            cmp.write_csv(&mut buf)?;
            write_output(g.out.as_deref(), &buf)?;
        }
        Command::Quartic(args) => quartic(args, g)?,
        Command::ParseCheck { file, label_map } => {
            let opts = ParseOptions {
                label_map: label_map.as_deref().map(parse_label_map).transpose()?.unwrap_or_default(),
                dim_override: None,
            };
            let data = read_libsvm_file(file, &opts)?;
            let (pos, neg) = data.label_counts();
            println!("rows: {}", data.n());
            println!("features: {}", data.dim());
            println!("labels: {pos} positive, {neg} negative");
            println!("max row norm^2: {}", data.max_row_norm_sq());
        }
        Command::ConfigSchema => println!("{}", serde_json::to_string_pretty(&ExperimentConfig::example())?),
    }
    Ok(())
}
