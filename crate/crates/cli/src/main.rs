use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use jlcm::fit::{classification_accuracy, fit, FitConfig};
use jlcm::grad::check_gradient;
use jlcm::io::{self, FitArtifacts, OutputDir, Truth};
use jlcm::model::JointModel;
use jlcm::modelsel::{compare, ess, split_rhat, split_rhat_classic, ComparisonResult};
use jlcm::simulate::{simulate_dataset, ScenarioConfig, SCENARIOS};
use jlcm::Error;

/// Exit status for bad input, configuration or missing files.
const EXIT_USER: u8 = 2;
/// Exit status when sampling produced nothing usable.
const EXIT_SAMPLER: u8 = 3;

#[derive(Parser)]
#[command(name = "jlcm", version, about = "Bayesian joint latent class models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a data set from a preset scenario.
    Simulate {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model and write draws, labels, summaries and criteria.
    Fit(FitArgs),
    /// Report MAP class sizes, and accuracy against a truth file.
    Classify {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Compare fits on the same subjects by LOOIC or WAIC, each against the
    /// next.
    Compare {
        #[arg(long, num_args = 2.., required = true)]
        fits: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Criterion::Loo)]
        criterion: Criterion,
        /// Print the comparisons as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Convergence diagnostics of a fit, or a gradient check.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Criterion {
    Loo,
    Waic,
}

impl Criterion {
    fn key(self) -> &'static str {
        match self {
            Criterion::Loo => "loo",
            Criterion::Waic => "waic",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Criterion::Loo => "LOOIC",
            Criterion::Waic => "WAIC",
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding longitudinal.csv and survival.csv.
    #[arg(long, conflicts_with_all = ["longitudinal", "survival"])]
    data: Option<PathBuf>,
    #[arg(long, requires = "survival")]
    longitudinal: Option<PathBuf>,
    #[arg(long, requires = "longitudinal")]
    survival: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> jlcm::Result<Vec<jlcm::model::SubjectData>> {
        match (&self.data, &self.longitudinal, &self.survival) {
            (Some(dir), _, _) => io::read_dataset_dir(dir),
            (None, Some(l), Some(s)) => io::read_dataset(l, s),
            _ => Err(Error::Config(
                "give --data DIR or both --longitudinal and --survival".into(),
            )),
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    target_accept: Option<f64>,
    #[arg(long)]
    max_tree_depth: Option<usize>,
    /// Fraction of highest-density draws in the chain weights.
    #[arg(long)]
    beta: Option<f64>,
    /// Ball radius of the chain weights.
    #[arg(long)]
    epsilon: Option<f64>,
}

impl FitArgs {
    fn apply(&self, c: &mut FitConfig) {
        let s = &mut c.sampler;
        if let Some(v) = self.chains {
            s.chains = v;
        }
        if let Some(v) = self.iterations {
            s.iterations = v;
        }
        if let Some(v) = self.warmup {
            s.warmup = v;
        }
        if let Some(v) = self.thin {
            s.thin = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.target_accept {
            s.target_accept = v;
        }
        if let Some(v) = self.max_tree_depth {
            s.max_tree_depth = v;
        }
        if let Some(v) = self.beta {
            c.selection.beta = v;
        }
        if self.epsilon.is_some() {
            c.selection.epsilon = self.epsilon;
        }
    }
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Fit directory to diagnose.
    #[arg(long, required_unless_present = "grad_check")]
    fit: Option<PathBuf>,
    /// Compare analytic and finite-difference gradients instead.
    #[arg(long, requires = "config")]
    grad_check: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 20)]
    points: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            scenario,
            n,
            seed,
            out,
        } => cmd_simulate(&scenario, n, seed, &out),
        Command::Fit(args) => cmd_fit(&args),
        Command::Classify { fit, truth } => cmd_classify(&fit, truth.as_deref()),
        Command::Compare {
            fits,
            criterion,
            json,
        } => cmd_compare(&fits, criterion, json),
        Command::Diagnose(args) => cmd_diagnose(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::AllChainsFailed(_) | Error::Sampler(_) => EXIT_SAMPLER,
        _ => EXIT_USER,
    }
}

fn cmd_simulate(scenario: &str, n: usize, seed: u64, out: &Path) -> jlcm::Result<()> {
    if !SCENARIOS.contains(&scenario) {
        return Err(Error::Config(format!(
            "unknown scenario `{scenario}`; choose one of {}",
            SCENARIOS.join(", ")
        )));
    }
    let config = ScenarioConfig::preset(scenario, n, seed)?;
    let data = simulate_dataset(&config)?;
    let dir = OutputDir::create(out)?;
    io::write_dataset(dir.path(), &data.subjects)?;
    io::write_truth(&dir.path().join(io::TRUTH_FILE), &Truth::new(&config, &data))?;
    let path = dir.commit()?;
    let events = data.subjects.iter().filter(|s| s.event).count();
    println!(
        "wrote {} subjects ({events} events) to {}",
        data.subjects.len(),
        path.display()
    );
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> jlcm::Result<()> {
    let (mut config, text) = io::read_fit_config(&args.config)?;
    args.apply(&mut config);
    config.validate()?;
    let data = args.data.load()?;
    let dir = OutputDir::create(&args.out)?;
    let result = fit(&config, &data)?;
    io::write_fit(dir.path(), &config, Some(&text), &result)?;
    let path = dir.commit()?;

    for c in &result.chains {
        let weight = result.selection.log_weights[c.chain_id]
            .map(|w| format!("{w:.3}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "chain {}: {} divergences, step size {:.4}, log weight {weight}{}",
            c.chain_id,
            c.post_warmup_divergences,
            c.step_size,
            c.failure.as_deref().map(|f| format!(", failed: {f}")).unwrap_or_default()
        );
    }
    println!("selected chain {}", result.selection.selected_chain);
    println!("LOOIC {:.2} (se {:.2})", result.loo.estimate, result.loo.se);
    println!("WAIC  {:.2} (se {:.2})", result.waic.estimate, result.waic.se);
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_classify(fit_dir: &Path, truth: Option<&Path>) -> jlcm::Result<()> {
    let art = io::read_fit(fit_dir)?;
    let g = art.n_classes();
    let mut sizes = vec![0usize; g];
    for m in &art.map {
        sizes[*m as usize - 1] += 1;
    }
    for (k, n) in sizes.iter().enumerate() {
        println!("class {}: {n} subjects", k + 1);
    }
    if let Some(path) = truth {
        let truth = io::read_truth(path)?;
        let labels = truth.labels_for(&art.meta.subject_ids)?;
        let classes = g.max(labels.iter().copied().max().unwrap_or(1) as usize);
        let acc = classification_accuracy(&art.map, &labels, classes)?;
        println!("accuracy {acc}");
    }
    Ok(())
}

fn cmd_compare(dirs: &[PathBuf], criterion: Criterion, json: bool) -> jlcm::Result<()> {
    let fits: Vec<FitArtifacts> = dirs.iter().map(|d| io::read_fit(d)).collect::<Result<_, _>>()?;
    for (d, f) in dirs.iter().zip(&fits).skip(1) {
        if f.meta.subject_ids != fits[0].meta.subject_ids {
            return Err(Error::Data(format!(
                "{} was fitted to different subjects",
                d.display()
            )));
        }
    }
    let crits = fits
        .iter()
        .map(|f| f.criterion(criterion.key()))
        .collect::<Result<Vec<_>, _>>()?;
    let comparisons: Vec<ComparisonResult> = crits
        .windows(2)
        .map(|w| compare(w[0], w[1]))
        .collect::<Result<_, _>>()?;
    if json {
        println!("{}", serde_json::to_string_pretty(&comparisons)?);
        return Ok(());
    }
    let label = criterion.label();
    let width = dirs.iter().map(|d| d.display().to_string().len()).max().unwrap_or(4).max(4);
    println!(
        "{:width$}  {:>12}  {:>9}  {:>10}  {:>10}  {:>8}  {:>10}",
        "fit", label, "se", "delta", "se_delta", "z", "p"
    );
    for (k, (d, c)) in dirs.iter().zip(&crits).enumerate() {
        let name = d.display().to_string();
        match comparisons.get(k) {
            Some(r) => println!(
                "{name:width$}  {:>12.2}  {:>9.2}  {:>10.2}  {:>10.2}  {:>8.3}  {:>10.4}",
                c.estimate, c.se, r.delta, r.se_delta, r.z, r.p_one_tailed
            ),
            None => println!(
                "{name:width$}  {:>12.2}  {:>9.2}  {:>10}  {:>10}  {:>8}  {:>10}",
                c.estimate, c.se, "-", "-", "-", "-"
            ),
        }
    }
    for (k, r) in comparisons.iter().enumerate() {
        let verdicts: Vec<String> = r
            .decisions
            .iter()
            .map(|d| {
                format!(
                    "{}% (z > {}): {}",
                    d.level * 100.0,
                    d.critical_value,
                    if d.prefer_b { "next" } else { "keep" }
                )
            })
            .collect();
        println!("{} vs {}: {}", k + 1, k + 2, verdicts.join("; "));
    }
    Ok(())
}

fn cmd_diagnose(args: &DiagnoseArgs) -> jlcm::Result<()> {
    if args.grad_check {
        let path = args.config.as_ref().expect("clap enforces --config");
        let (config, _) = io::read_fit_config(path)?;
        let data = args.data.load()?;
        let model = JointModel::new(&config.model, &config.priors(), &data)?;
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        let err = check_gradient(&model, args.points, args.step, &mut rng)?;
        println!(
            "max relative gradient error over {} points (h = {}): {err:e}",
            args.points, args.step
        );
        return Ok(());
    }
    let dir = args.fit.as_ref().expect("clap enforces --fit");
    let art = io::read_fit(dir)?;
    let usable: Vec<usize> = art
        .meta
        .chains
        .iter()
        .filter(|c| c.failure.is_none() && c.n_draws > 0)
        .map(|c| c.chain_id)
        .collect();
    println!(
        "{} of {} chains usable; R-hat from split halves",
        usable.len(),
        art.meta.chains.len()
    );
    let width = art.meta.parameter_names.iter().map(|n| n.len()).max().unwrap_or(9).max(9);
    println!("{:width$}  {:>8}  {:>8}  {:>9}", "parameter", "rhat", "rhat_raw", "ess_bulk");
    for (k, name) in art.meta.parameter_names.iter().enumerate() {
        let chains: Vec<Vec<f64>> = usable
            .iter()
            .map(|&c| art.draws[c].iter().map(|row| row[k]).collect())
            .collect();
        println!(
            "{name:width$}  {:>8.4}  {:>8.4}  {:>9.1}",
            split_rhat(&chains),
            split_rhat_classic(&chains),
            ess(&chains)
        );
    }
    for c in &art.meta.chains {
        println!(
            "chain {}: {} of {} post-warmup iterations divergent{}",
            c.chain_id,
            c.post_warmup_divergences,
            c.post_warmup_iterations,
            c.failure.as_deref().map(|f| format!(" (failed: {f})")).unwrap_or_default()
        );
    }
    Ok(())
}
