//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use sparlow::error::Result;
use sparlow::pipeline::check_grad::{check_grad, GradCheckConfig};
use sparlow::pipeline::data::{load_dataset, write_csv_rows, write_csv_samples, DataFormat, Dataset};
use sparlow::pipeline::init::init_class_dictionaries;
use sparlow::pipeline::{
    embed, evaluate_1nn, export_features, init_dictionary, train, Model, TrainConfig, TrainMode,
};
use sparlow::{GraphSpec, SparlowError, Variant};

#[derive(Parser, Debug)]
#[command(
    name = "sparlow",
    version,
    about = "Sparse low-dimensional representation learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn an initial dictionary and write it as CSV (m rows, r columns).
    LearnDict(Opts),
    /// Train a model and save it.
    Train(Opts),
    /// Embed samples with a trained model; one embedded sample per CSV row.
    Embed(Opts),
    /// 1NN accuracy of a trained model on a test set.
    Eval(EvalOpts),
    /// Write the m×l feature matrix D·U as CSV.
    ExportFeatures(Opts),
    /// Compare analytic gradients against central differences.
    CheckGrad(GradOpts),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Raw,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Joint,
    Frozen,
    Sequential,
}

#[derive(Args, Debug)]
struct Opts {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long, default_value = "pca")]
    variant: Variant,
    #[arg(long, default_value_t = 64)]
    atoms: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 0.2)]
    lambda1: f64,
    #[arg(long, default_value_t = 1e-3)]
    lambda2: f64,
    #[arg(long, default_value_t = 1e-3)]
    sigma: f64,
    #[arg(long, default_value_t = 2.5e-4)]
    mu1: f64,
    #[arg(long, default_value_t = 5e-3)]
    mu2: f64,
    #[arg(long)]
    knn: Option<usize>,
    #[arg(long)]
    heat_t: Option<f64>,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    k2: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    #[arg(long)]
    mu_mvr: Option<f64>,
    #[arg(long)]
    rho1: Option<f64>,
    #[arg(long)]
    rho2: Option<f64>,
    /// CG iterations (dictionary alternations for `learn-dict`).
    #[arg(long)]
    max_iter: Option<usize>,
    /// Riemannian gradient norm at which CG stops.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "joint")]
    mode: Mode,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct EvalOpts {
    #[command(flatten)]
    opts: Opts,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    test_labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradOpts {
    #[command(flatten)]
    opts: Opts,
    /// Scale the analytic dictionary gradient by 1.5.
    #[arg(long, hide = true)]
    corrupt: bool,
}

impl Opts {
    fn format(&self) -> DataFormat {
        match self.format {
            Format::Csv => DataFormat::Csv,
            Format::Raw => DataFormat::Raw,
        }
    }

    fn dataset(&self) -> Result<Dataset> {
        let path = required(&self.data, "--data")?;
        load_dataset(path, self.format(), self.labels.as_deref())
    }

    fn graph(&self) -> GraphSpec {
        let mut g = GraphSpec::new(self.variant);
        g.knn = self.knn.unwrap_or(g.knn);
        g.heat_t = self.heat_t.or(g.heat_t);
        g.k1 = self.k1.unwrap_or(g.k1);
        g.k2 = self.k2.unwrap_or(g.k2);
        g.alpha = self.alpha.unwrap_or(g.alpha);
        g.alpha1 = self.alpha1.unwrap_or(g.alpha1);
        g.alpha2 = self.alpha2.unwrap_or(g.alpha2);
        g.mu_mvr = self.mu_mvr.unwrap_or(g.mu_mvr);
        g.rho1 = self.rho1.unwrap_or(g.rho1);
        g.rho2 = self.rho2.unwrap_or(g.rho2);
        g
    }

    fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::new(self.variant, self.atoms, self.dim);
        cfg.lambda1 = self.lambda1;
        cfg.lambda2 = self.lambda2;
        cfg.sigma = self.sigma;
        cfg.mu1 = self.mu1;
        cfg.mu2 = self.mu2;
        cfg.graph = self.graph();
        cfg.seed = self.seed;
        cfg.cg.seed = self.seed;
        cfg.cg.verbose = self.verbose;
        cfg.cg.max_iters = self.max_iter.unwrap_or(cfg.cg.max_iters);
        cfg.cg.grad_tol = self.tol.unwrap_or(cfg.cg.grad_tol);
        cfg.mode = match self.mode {
            Mode::Joint => TrainMode::Joint,
            Mode::Frozen => TrainMode::FrozenDictionary,
            Mode::Sequential => TrainMode::Sequential,
        };
        cfg
    }

    fn load_model(&self) -> Result<Model> {
        Model::load(required(&self.model, "--model")?)
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| SparlowError::Validation(format!("{flag} is required")))
}

fn learn_dict(o: &Opts) -> Result<()> {
    let ds = o.dataset()?;
    let cfg = o.train_config();
    let prior = cfg.prior()?;
    let iters = o.max_iter.unwrap_or(cfg.dict_iters);
    let fit = match &ds.labels {
        Some(labels) if o.variant.uses_labels() => {
            init_class_dictionaries(&ds.x, labels, o.atoms, &prior, iters, o.seed)?.0
        }
        _ => init_dictionary(&ds.x, o.atoms, &prior, iters, o.seed)?,
    };
    info!("reconstruction error per alternation: {:?}", fit.errors);
    write_csv_rows(required(&o.out, "--out")?, fit.dict.matrix())?;
    println!(
        "atoms\t{}\nreconstruction_error\t{:.6e}",
        o.atoms,
        fit.errors.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn train_cmd(o: &Opts) -> Result<()> {
    let ds = o.dataset()?;
    let path = o
        .model
        .as_deref()
        .or(o.out.as_deref())
        .ok_or_else(|| SparlowError::Validation("--model (or --out) is required".into()))?;
    let out = train(&ds, &o.train_config())?;
    out.model.save(path)?;
    println!(
        "initial_J\t{:.12e}\nfinal_J\t{:.12e}\niterations\t{}\nstop\t{:?}",
        out.trace.initial_j,
        out.trace.final_j(),
        out.trace.iterations(),
        out.trace.stop
    );
    Ok(())
}

fn embed_cmd(o: &Opts) -> Result<()> {
    let model = o.load_model()?;
    let ds = o.dataset()?;
    let y = embed(&model, &ds.x)?;
    write_csv_samples(required(&o.out, "--out")?, &y)
}

fn labels_of(ds: &Dataset, what: &str) -> Result<Vec<i64>> {
    ds.labels
        .as_ref()
        .map(|l| l.raw().to_vec())
        .ok_or_else(|| SparlowError::Validation(format!("{what} set needs labels")))
}

fn eval_cmd(e: &EvalOpts) -> Result<()> {
    let o = &e.opts;
    let model = o.load_model()?;
    let train_set = o.dataset()?;
    let test_set = load_dataset(&e.test, o.format(), e.test_labels.as_deref())?;
    let a = embed(&model, &train_set.x)?;
    let b = embed(&model, &test_set.x)?;
    let acc = evaluate_1nn(
        &a,
        &labels_of(&train_set, "training")?,
        &b,
        &labels_of(&test_set, "test")?,
    )?;
    println!("accuracy\t{acc:.6}");
    Ok(())
}

fn export_cmd(o: &Opts) -> Result<()> {
    let model = o.load_model()?;
    export_features(&model, required(&o.out, "--out")?)
}

fn check_grad_cmd(g: &GradOpts) -> Result<()> {
    let o = &g.opts;
    let ds = o.data.as_ref().map(|_| o.dataset()).transpose()?;
    let mut cfg = GradCheckConfig::new(o.variant);
    cfg.graph = o.graph();
    cfg.seed = o.seed;
    cfg.lambda1 = o.lambda1;
    cfg.lambda2 = o.lambda2;
    cfg.sigma = o.sigma;
    cfg.mu1 = o.mu1;
    cfg.mu2 = o.mu2;
    cfg.corrupt = g.corrupt;
    if ds.is_some() {
        cfg.r = o.atoms;
        cfg.l = o.dim;
    }
    let report = check_grad(ds.as_ref(), &cfg)?;
    let tol = o.tol.unwrap_or(1e-4);
    println!("grad_D\t{:.3e}", report.grad_d);
    println!("grad_P\t{:.3e}", report.grad_p);
    println!("riemannian\t{:.3e}", report.riemannian);
    println!("jacobian\t{:.3e}", report.jacobian);
    println!("skipped\t{}", report.skipped);
    println!("status\t{}", if report.passes(tol) { "pass" } else { "fail" });
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::LearnDict(o) => learn_dict(o),
        Command::Train(o) => train_cmd(o),
        Command::Embed(o) => embed_cmd(o),
        Command::Eval(e) => eval_cmd(e),
        Command::ExportFeatures(o) => export_cmd(o),
        Command::CheckGrad(g) => check_grad_cmd(g),
    }
}

fn verbose(cli: &Cli) -> bool {
    match &cli.command {
        Command::LearnDict(o) | Command::Train(o) | Command::Embed(o) | Command::ExportFeatures(o) => {
            o.verbose
        }
        Command::Eval(e) => e.opts.verbose,
        Command::CheckGrad(g) => g.opts.verbose,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if verbose(&cli) { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
