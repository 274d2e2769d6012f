use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use efa_taxon::classifiers::{Hyperparams, Method};
use efa_taxon::efa::{EfaOptions, Parameterization};
use efa_taxon::evaluation::{run_experiment, EvalConfig, EvaluationReport, Level, Metric};
use efa_taxon::features::{ComponentPolicy, FeatureMatrix, FeatureTransform, ScoreMode};
use efa_taxon::hierarchy::Taxonomy;
use efa_taxon::linalg::argmax;
use efa_taxon::outline::{read_outlines, write_outlines, ToothType};
use efa_taxon::pipeline::{amplitude_matrix, load_labeled, train, TrainedModel};
use efa_taxon::synth::{generate, Layout, TaxonomySpec};
use efa_taxon::{Error, Result};

#[derive(Parser)]
#[command(name = "efa-taxon", version, about = "Outline-based tribe and species classification")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic outline dataset, one CSV per tooth type.
    Synth(SynthArgs),
    /// Convert an outline CSV to amplitude + principal-component features.
    Featurize(FeaturizeArgs),
    /// Nested cross-validation of the chosen methods and tooth types.
    Evaluate(EvaluateArgs),
    /// Fit one hierarchical model on a whole outline CSV.
    Train(TrainArgs),
    /// Joint species probabilities for the outlines in a CSV.
    Predict(PredictArgs),
    /// Rewrite the summary tables of a saved report and print them.
    Report(ReportArgs),
}

#[derive(Args)]
struct FeatureArgs {
    /// Harmonics per outline.
    #[arg(long, default_value_t = 15)]
    harmonics: usize,
    /// Keep the fewest principal components reaching this variance fraction.
    #[arg(long, default_value_t = 0.99, conflicts_with = "pca_components")]
    pca_variance: f64,
    /// Keep exactly this many principal components.
    #[arg(long)]
    pca_components: Option<usize>,
    /// Outline parameterization: `template` or `chord`.
    #[arg(long, default_value = "template")]
    parameterization: Parameterization,
    /// Normalize coefficients for size and rotation before use.
    #[arg(long)]
    normalize: bool,
    /// Principal-component scores: `centered` or `literal`.
    #[arg(long, default_value = "centered", value_parser = parse_score_mode)]
    score_mode: ScoreMode,
}

impl FeatureArgs {
    fn efa(&self) -> Result<EfaOptions> {
        if self.harmonics == 0 {
            return Err(Error::InvalidHyperparameter("--harmonics must be at least 1".into()));
        }
        Ok(EfaOptions {
            harmonics: self.harmonics,
            parameterization: self.parameterization,
            normalize: self.normalize,
        })
    }

    fn policy(&self) -> Result<ComponentPolicy> {
        match self.pca_components {
            Some(p) => Ok(ComponentPolicy::Fixed(p)),
            None if self.pca_variance > 0.0 && self.pca_variance <= 1.0 => Ok(ComponentPolicy::Variance(self.pca_variance)),
            None => Err(Error::InvalidHyperparameter(format!(
                "--pca-variance must be in (0, 1], got {}",
                self.pca_variance
            ))),
        }
    }
}

fn parse_score_mode(s: &str) -> std::result::Result<ScoreMode, String> {
    match s {
        "centered" => Ok(ScoreMode::Centered),
        "literal" => Ok(ScoreMode::Literal),
        _ => Err(format!("expected `centered` or `literal`, got {s:?}")),
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Generator spec (JSON). Defaults to the built-in 7-tribe, 20-species layout.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Arrange tribes as nested rings of this radius instead of Gaussian offsets.
    #[arg(long)]
    rings: Option<f64>,
    /// Place species of each tribe in antipodal pairs on a shell of this radius.
    #[arg(long, conflicts_with = "rings")]
    shells: Option<f64>,
    /// Comma-separated tooth types, or `all`.
    #[arg(long, default_value = "all")]
    teeth: String,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Feature CSV; the PCA sidecar is written next to it with a `.json` extension.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    features: FeatureArgs,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    inner_folds: usize,
    /// Keep every F-th grid value and grow 2000/F trees.
    #[arg(long)]
    fast: Option<usize>,
    /// Taxonomy JSON. Inferred from the labels when absent.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[command(flatten)]
    features: FeatureArgs,
}

impl CvArgs {
    fn config(&self) -> Result<EvalConfig> {
        if self.inner_folds < 2 {
            return Err(Error::InvalidHyperparameter("--inner-folds must be at least 2".into()));
        }
        let mut cfg = EvalConfig {
            inner_folds: self.inner_folds,
            components: self.features.policy()?,
            score_mode: self.features.score_mode,
            ..EvalConfig::default()
        };
        if let Some(f) = self.fast {
            if f == 0 {
                return Err(Error::InvalidHyperparameter("--fast must be at least 1".into()));
            }
            cfg = cfg.with_fast(f);
        }
        Ok(cfg)
    }

    fn taxonomy(&self, data_dir: Option<&Path>) -> Result<Option<Taxonomy>> {
        let path = self
            .taxonomy
            .clone()
            .or_else(|| data_dir.map(|d| d.join("taxonomy.json")).filter(|p| p.exists()));
        path.map(|p| Taxonomy::load(&p).map_err(|e| e.context(p.display().to_string())))
            .transpose()
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory holding `<TOOTH>.csv` outline files.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for `report.json` and the summary tables.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated methods (lda, npmr, rf, svm, nnet), or `all`.
    #[arg(long, default_value = "all")]
    methods: String,
    /// Comma-separated tooth types, or `all`.
    #[arg(long, default_value = "all")]
    teeth: String,
    #[arg(long, default_value_t = 6)]
    outer_folds: usize,
    #[command(flatten)]
    cv: CvArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    method: Method,
    /// Model JSON to write.
    #[arg(long)]
    out: PathBuf,
    /// NPMR penalty. Giving a method's hyperparameters skips tuning.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    cost: Option<f64>,
    /// NNET hidden units.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    decay: Option<f64>,
    /// Random forest size.
    #[arg(long)]
    trees: Option<usize>,
    /// Grow each tree on the full training set.
    #[arg(long)]
    no_bootstrap: bool,
    #[command(flatten)]
    cv: CvArgs,
}

impl TrainArgs {
    fn hyperparams(&self) -> Result<Option<Hyperparams>> {
        let missing = |name: &str| Error::InvalidHyperparameter(format!("{} also needs --{name}", self.method.name()));
        Ok(match self.method {
            Method::Lda => Some(Hyperparams::Lda),
            Method::Npmr => self.lambda.map(|lambda| Hyperparams::Npmr { lambda }),
            Method::Rf => self.mtry.map(|mtry| Hyperparams::Rf { mtry }),
            Method::Svm => match (self.gamma, self.cost) {
                (Some(gamma), Some(cost)) => Some(Hyperparams::Svm { gamma, cost }),
                (None, None) => None,
                (Some(_), None) => return Err(missing("cost")),
                (None, Some(_)) => return Err(missing("gamma")),
            },
            Method::Nnet => match (self.size, self.decay) {
                (Some(size), Some(decay)) => Some(Hyperparams::Nnet { size, decay }),
                (None, None) => None,
                (Some(_), None) => return Err(missing("decay")),
                (None, Some(_)) => return Err(missing("size")),
            },
        })
    }
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Prediction CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// A `report.json` written by `evaluate`.
    #[arg(long)]
    report: PathBuf,
    /// Where to write the tables (default: next to the report).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_list<T>(s: &str, all: &[T], parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>>
where
    T: Copy + PartialEq,
{
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(all.to_vec());
    }
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let v = parse(part.trim())?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidHyperparameter(format!("empty list {s:?}")));
    }
    Ok(out)
}

fn parse_teeth(s: &str) -> Result<Vec<ToothType>> {
    let mut t = parse_list(s, &ToothType::ALL, |p| p.parse())?;
    t.sort();
    Ok(t)
}

fn parse_methods(s: &str) -> Result<Vec<Method>> {
    let mut m = parse_list(s, &Method::ALL, |p| p.parse())?;
    m.sort_by_key(|m| Method::ALL.iter().position(|a| a == m));
    Ok(m)
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    let mut p = path.to_path_buf();
    p.set_extension(ext);
    p
}

fn synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => TaxonomySpec::load(p)?,
        None => TaxonomySpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(radius) = args.rings {
        spec.layout = Layout::Rings { radius };
    }
    if let Some(radius) = args.shells {
        spec.layout = Layout::Shells { radius };
    }
    spec.validate()?;
    let teeth = parse_teeth(&args.teeth)?;
    std::fs::create_dir_all(&args.out)?;
    for (tooth, outlines) in generate(&spec)? {
        if teeth.contains(&tooth) {
            write_outlines(&args.out.join(format!("{tooth}.csv")), &outlines)?;
        }
    }
    std::fs::write(args.out.join("taxonomy.json"), serde_json::to_string_pretty(&spec.taxonomy())?)?;
    std::fs::write(args.out.join("spec.json"), serde_json::to_string_pretty(&spec)?)?;
    Ok(())
}

fn featurize(args: &FeaturizeArgs) -> Result<()> {
    let outlines = read_outlines(&args.input)?;
    let a = amplitude_matrix(&outlines, &args.features.efa()?)?;
    let t = FeatureTransform::fit(&a.values, args.features.policy()?, args.features.score_mode)?;
    let fm = FeatureMatrix::build(&a, &t)?;
    efa_taxon::features::write_features(&args.out, &with_extension(&args.out, "json"), &fm, &t)
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let teeth = parse_teeth(&args.teeth)?;
    let methods = parse_methods(&args.methods)?;
    if args.outer_folds < 2 {
        return Err(Error::InvalidHyperparameter("--outer-folds must be at least 2".into()));
    }
    let cfg = EvalConfig {
        outer_folds: args.outer_folds,
        ..args.cv.config()?
    };
    let taxonomy = args.cv.taxonomy(Some(&args.data))?;
    let efa = args.cv.features.efa()?;
    let datasets = teeth
        .iter()
        .map(|t| load_labeled(&args.data.join(format!("{t}.csv")), &efa, taxonomy.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let report = run_experiment(&datasets, &methods, &cfg, args.cv.seed)?;
    for p in report.write(&args.out)? {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let mut cfg = args.cv.config()?;
    if let Some(t) = args.trees {
        if t == 0 {
            return Err(Error::InvalidHyperparameter("--trees must be at least 1".into()));
        }
        cfg.fit.rf.n_trees = t;
    }
    cfg.fit.rf.bootstrap = !args.no_bootstrap;
    let efa = args.cv.features.efa()?;
    let taxonomy = args.cv.taxonomy(args.input.parent())?;
    let data = load_labeled(&args.input, &efa, taxonomy.as_ref())?;
    let model = train(&data, efa, args.method, args.hyperparams()?, &cfg, args.cv.seed)?;
    std::fs::write(&args.out, model.to_json()?)?;
    Ok(())
}

fn predict(args: &PredictArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.model)?;
    let model = TrainedModel::from_json(&text).map_err(|e| e.context(args.model.display().to_string()))?;
    let outlines = read_outlines(&args.input)?;
    let preds = model.predict(&outlines)?;
    let tax = &model.model.taxonomy;
    let tribes = tax.tribe_names();
    let species = tax.species_names();
    let owner = tax.tribe_of_species();
    let mut out = String::from("specimen_id,tribe,species");
    for s in &species {
        out.push(',');
        out.push_str(&csv_field(s));
    }
    out.push('\n');
    for (o, p) in outlines.iter().zip(&preds) {
        let g = argmax(&p.species);
        let line: Vec<String> = [csv_field(&o.specimen_id), csv_field(&tribes[owner[g]]), csv_field(&species[g])]
            .into_iter()
            .chain(p.species.iter().map(|v| v.to_string()))
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    match &args.out {
        Some(p) => std::fs::write(p, out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn report(args: &ReportArgs) -> Result<()> {
    let report = EvaluationReport::from_json(&std::fs::read_to_string(&args.report)?)?;
    let dir = match &args.out {
        Some(d) => d.clone(),
        None => args.report.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    report.write_tables(&dir)?;
    for level in [Level::Tribe, Level::Species] {
        for metric in [Metric::LogLoss, Metric::Accuracy] {
            println!("# {level:?} {}", metric.key());
            print!("{}", report.table_csv(level, metric)?);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Featurize(a) => featurize(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e.root(), Error::InvalidHyperparameter(_)) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
