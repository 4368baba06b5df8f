use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use osgd::analysis::{concentration_term, moreau_grad_norm, optimality_gap, MoreauConfig};
use osgd::coeffs::{beta_cdf, gamma_asymptotic, gamma_rescaled_curve, gamma_weights, gamma_weights_approx, gamma_weights_auto};
use osgd::data::{gen_clusters_2d, gen_rings_2d, load_idx, load_semeion, write_cache, ClustersSpec, Dataset, RingsSpec};
use osgd::harness::{
    comparison_table, read_records_csv, run_experiment, run_seed, run_verification_suite, run_with_baseline,
    summary_table, sweep_q, train_test, unbiasedness_deviation, write_outputs, ExperimentResult, RunConfig,
    VerifyOptions,
};
use osgd::selection::{seeded_rng, stream};

#[derive(Parser)]
#[command(name = "osgd", version, about = "Ordered SGD experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a run config and write per-epoch records.
    Train(TrainArgs),
    /// Repeat a run for several fixed q values.
    SweepQ(SweepArgs),
    /// Run the built-in verification suite.
    Verify(VerifyArgs),
    /// Exact or floating weights γ_j for one (n, s, q).
    Gamma(GammaArgs),
    /// Rescaled weights n·γ against their large-n limit.
    GammaCurve(CurveArgs),
    /// Generate or import data sets into the binary cache format.
    #[command(subcommand)]
    Data(DataCommand),
    /// Theory-side measurements.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// `key.path=value`, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replace the config's seed list.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_file(&self.config, &self.overrides)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &RunConfig) -> Option<PathBuf> {
        self.out.clone().or_else(|| cfg.output_dir.as_ref().map(|d| cfg.base_dir.join(d)))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Also train the matching mini-batch baseline and report the improvement.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    q: Vec<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(subcommand)]
    which: Option<VerifyCommand>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturb γ before the checks run; the suite must then fail.
    #[arg(long)]
    corrupt_gamma: bool,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum VerifyCommand {
    /// Exhaustive expected step against the L_q subgradient.
    Unbiasedness {
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        s: usize,
        #[arg(long, default_value_t = 2)]
        q: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct GammaArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    s: usize,
    #[arg(long)]
    q: usize,
    /// Big-integer weights only.
    #[arg(long, conflicts_with = "float")]
    exact: bool,
    /// Log-space floating weights only.
    #[arg(long)]
    float: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    s: usize,
    #[arg(long)]
    q: usize,
    /// Interior grid points z = k/(points+1).
    #[arg(long, default_value_t = 99)]
    points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DataCommand {
    GenRings {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML geometry; the bundled defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    GenClusters {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    ImportIdx {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    ImportSemeion {
        #[arg(long)]
        path: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Moreau-envelope gradient norm of L_q before and after training.
    Moreau {
        #[command(flatten)]
        run: RunArgs,
        /// Rank count for γ; the config's initial q otherwise.
        #[arg(long)]
        q: Option<usize>,
        #[arg(long, default_value_t = 10.0)]
        rho_hat: f64,
        #[arg(long, default_value_t = 1e-8)]
        inner_tol: f64,
        #[arg(long, default_value_t = 1_000_000)]
        inner_max_iter: usize,
        #[arg(long)]
        inner_lr: Option<f64>,
    },
    /// Running-minimum gap of `train_ordered_loss` in a records CSV.
    Gap {
        #[arg(long)]
        records: PathBuf,
        /// Reference optimum.
        #[arg(long)]
        star: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// (M s / q) · sqrt(ln(1/δ) / 2n).
    BoundTerm {
        #[arg(long)]
        m: f64,
        #[arg(long)]
        s: usize,
        #[arg(long)]
        q: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        delta: f64,
    },
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn save(ds: &Dataset, out: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    write_cache(ds, &mut w)?;
    w.flush()?;
    eprintln!("wrote {} examples ({} features, {} classes) to {}", ds.len(), ds.dim(), ds.num_classes(), out.display());
    Ok(())
}

fn read_spec<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(toml::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?),
        None => Ok(T::default()),
    }
}

fn finish(results: &[&ExperimentResult], dir: Option<PathBuf>) -> Result<()> {
    if let Some(dir) = dir {
        write_outputs(&dir, results)?;
        eprintln!("records and summary written to {}", dir.display());
    }
    for r in results {
        if !r.summary.failed_seeds.is_empty() {
            eprintln!("{}: seeds {:?} diverged", r.summary.config_id, r.summary.failed_seeds);
        }
    }
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let cfg = args.run.load()?;
    if args.baseline {
        let (ord, base) = run_with_baseline(&cfg)?;
        print!("{}", comparison_table(&[(cfg.config_id.clone(), &base.summary, &ord.summary)]));
        finish(&[&ord, &base], args.run.out_dir(&cfg))
    } else {
        let res = run_experiment(&cfg)?;
        print!("{}", summary_table([&res.summary]));
        finish(&[&res], args.run.out_dir(&cfg))
    }
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let cfg = args.run.load()?;
    let results = sweep_q(&cfg, &args.q)?;
    print!("{}", summary_table(results.iter().map(|r| &r.summary)));
    let refs: Vec<&ExperimentResult> = results.iter().collect();
    finish(&refs, args.run.out_dir(&cfg))
}

fn verify(args: &VerifyArgs) -> Result<bool> {
    if let Some(VerifyCommand::Unbiasedness { n, s, q, trials, seed }) = args.which {
        let dev = unbiasedness_deviation(n, s, q, trials, seed)?;
        println!("max componentwise deviation over {trials} instances (n={n}, s={s}, q={q}): {dev:e}");
        return Ok(dev <= 1e-10);
    }
    let report = run_verification_suite(&VerifyOptions {
        seed: args.seed,
        corrupt_gamma: args.corrupt_gamma,
    });
    for c in &report.checks {
        println!("{:4}  {:18} {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(p) = &args.report {
        std::fs::write(p, report.to_json())?;
    }
    Ok(report.passed)
}

fn gamma(args: &GammaArgs) -> Result<()> {
    let g = if args.exact {
        gamma_weights(args.n, args.s, args.q)?
    } else if args.float {
        gamma_weights_approx(args.n, args.s, args.q)?
    } else {
        gamma_weights_auto(args.n, args.s, args.q)?
    };
    let mut w = csv::Writer::from_writer(sink(args.out.as_deref())?);
    w.write_record(["j", "gamma_exact_num", "gamma_exact_den", "gamma_float"])?;
    for (j, v) in g.approx().iter().enumerate() {
        let (num, den) = match g.exact() {
            Some(e) => (e.numerators[j].to_string(), e.denominator.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([(j + 1).to_string(), num, den, format!("{v:e}")])?;
    }
    w.flush()?;
    Ok(())
}

fn gamma_curve(args: &CurveArgs) -> Result<()> {
    let (s, q) = (args.s, args.q);
    let curve = gamma_rescaled_curve(args.n, s, q)?;
    let mut w = csv::Writer::from_writer(sink(args.out.as_deref())?);
    w.write_record(["z", "n_gamma", "gamma_limit", "beta_gap"])?;
    for k in 1..=args.points {
        let z = k as f64 / (args.points + 1) as f64;
        let n_gamma = curve.value_at_ceil(z);
        let limit = gamma_asymptotic(z, s, q)?;
        // 1 - nγ/s against I_z(q, s-q); the Beta law degenerates at 1 when q = s
        let tail = if q == s { 0.0 } else { beta_cdf(z, q as f64, (s - q) as f64)? };
        let gap = 1.0 - n_gamma / s as f64 - tail;
        w.write_record([z.to_string(), format!("{n_gamma:e}"), format!("{limit:e}"), format!("{gap:e}")])?;
    }
    w.flush()?;
    Ok(())
}

fn data(cmd: &DataCommand) -> Result<()> {
    match cmd {
        DataCommand::GenRings { seed, spec, out } => {
            save(&gen_rings_2d(*seed, &read_spec::<RingsSpec>(spec.as_deref())?)?, out)
        }
        DataCommand::GenClusters { seed, spec, out } => {
            save(&gen_clusters_2d(*seed, &read_spec::<ClustersSpec>(spec.as_deref())?)?, out)
        }
        DataCommand::ImportIdx { images, labels, out } => save(&load_idx(images, labels)?, out),
        DataCommand::ImportSemeion { path, out } => save(&load_semeion(path)?, out),
    }
}

fn analyze(cmd: &AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Moreau {
            run,
            q,
            rho_hat,
            inner_tol,
            inner_max_iter,
            inner_lr,
        } => {
            let cfg = run.load()?;
            let mcfg = MoreauConfig {
                rho_hat: *rho_hat,
                inner_tol: *inner_tol,
                inner_max_iter: *inner_max_iter,
                inner_lr: *inner_lr,
            };
            mcfg.validate()?;
            let ds = cfg.dataset.load(&cfg.base_dir)?;
            let (train, test) = train_test(&ds);
            let obj = cfg.objective(train.dim(), train.num_classes())?;
            let s = cfg.opt.batch_size;
            let g = gamma_weights_auto(train.len(), s, q.unwrap_or_else(|| cfg.opt.initial_q()))?;
            let mut w = csv::Writer::from_writer(sink(None)?);
            w.write_record(["seed", "epoch", "moreau_grad_norm"])?;
            for &seed in &cfg.seeds {
                let initial = obj.init_params(&mut seeded_rng(seed, stream::INIT));
                let trained = run_seed(&cfg, &train, test.as_ref(), seed)?.final_theta;
                for (epoch, theta) in [(0, &initial), (cfg.epochs, &trained)] {
                    let m = moreau_grad_norm(&obj, theta, &train, &g, &mcfg)?;
                    w.write_record([seed.to_string(), epoch.to_string(), format!("{m:e}")])?;
                }
            }
            w.flush()?;
            Ok(())
        }
        AnalyzeCommand::Gap { records, star, out } => {
            let recs = read_records_csv(File::open(records).with_context(|| format!("opening {}", records.display()))?)?;
            let mut w = csv::Writer::from_writer(sink(out.as_deref())?);
            w.write_record(["seed", "epoch", "train_ordered_loss", "gap"])?;
            let mut seeds: Vec<u64> = recs.iter().map(|r| r.seed).collect();
            seeds.dedup();
            for seed in seeds {
                let rows: Vec<_> = recs.iter().filter(|r| r.seed == seed).collect();
                let history: Vec<f64> = rows.iter().map(|r| r.train_ordered_loss).collect();
                for (r, gap) in rows.iter().zip(optimality_gap(&history, *star)) {
                    w.write_record([seed.to_string(), r.epoch.to_string(), format!("{:e}", r.train_ordered_loss), format!("{gap:e}")])?;
                }
            }
            w.flush()?;
            Ok(())
        }
        AnalyzeCommand::BoundTerm { m, s, q, n, delta } => {
            let term = concentration_term(*m, *s, *q, *n, *delta)?;
            println!("m,s,q,n,delta,term");
            println!("{m},{s},{q},{n},{delta},{term:e}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train(a) => train(a).map(|_| true),
        Command::SweepQ(a) => sweep(a).map(|_| true),
        Command::Verify(a) => verify(a),
        Command::Gamma(a) => gamma(a).map(|_| true),
        Command::GammaCurve(a) => gamma_curve(a).map(|_| true),
        Command::Data(c) => data(c).map(|_| true),
        Command::Analyze(c) => analyze(c).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
