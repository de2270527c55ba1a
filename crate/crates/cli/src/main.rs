use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use grassreg::eval::{self, CvPlan, PredictionConfig, Predictor};
use grassreg::ggr::{self, fit_cs_ggr, fit_piecewise_std_ggr, fit_std_ggr, fit_tw_ggr, Sample};
use grassreg::io::{self, DatasetFile, LandmarkLayout, ModelFile};
use grassreg::represent::{self, IdentifyConfig};
use grassreg::synthetic::{self, FrequencyLaw, SynthConfig};
use grassreg::{Curve, Dataset, Error, FitConfig, FitReport, FittedModel, TimeWarp};
use serde_json::json;

#[derive(Parser)]
#[command(name = "grassreg", version, about = "Regression on the Grassmann manifold")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of LDS subspaces.
    Synth(SynthArgs),
    /// Convert a landmark table into a dataset.
    ShapeImport(ShapeArgs),
    /// Identify an LDS per frame matrix and convert them into a dataset.
    LdsImport(LdsArgs),
    /// Fit a regression model.
    Fit(FitCmd),
    /// Report R², energy and residual statistics of a model on a dataset.
    Eval(EvalArgs),
    /// Predict the independent variable of each sample of a dataset.
    Predict(PredictArgs),
    /// Cross-validate a fitting method.
    Cv(CvArgs),
    /// Evaluate a model at given locations and emit them as a dataset file.
    SampleCurve(SampleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Law {
    Std,
    Logistic,
    Sine,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    num_points: usize,
    #[arg(long, value_enum, default_value_t = Law::Std)]
    law: Law,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 24)]
    embed_dim: usize,
    /// Perturb the generated points along the manifold by this shooting time.
    #[arg(long)]
    perturb: Option<f64>,
    #[arg(long, default_value_t = 1)]
    perturb_seed: u64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ShapeArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Metadata fields before the coordinates of each record.
    #[arg(long, default_value_t = 2)]
    leading: usize,
    /// Index of the metadata field holding the independent variable.
    #[arg(long, default_value_t = 1)]
    r_field: usize,
    #[arg(long)]
    landmarks: usize,
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[arg(long)]
    units: Option<String>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LdsArgs {
    /// Lines of `r,path`; relative paths resolve against the manifest.
    #[arg(long, short)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 2)]
    p: usize,
    /// Weigh frames with a Gaussian of this width centered on the middle frame.
    #[arg(long)]
    gaussian_sigma: Option<f64>,
    /// Keep the temporal mean of the frames.
    #[arg(long)]
    no_center: bool,
    #[arg(long)]
    units: Option<String>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Kind {
    Std,
    Tw,
    Cs,
    Piecewise,
}

#[derive(Args, Clone)]
struct FitOptions {
    #[arg(long = "fit", value_enum, default_value_t = Kind::Std)]
    kind: Kind,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    /// Control points of the spline fit, in original units.
    #[arg(long, value_delimiter = ',')]
    controls: Vec<f64>,
    /// Breakpoints of the piecewise fit, in original units.
    #[arg(long, value_delimiter = ',')]
    breakpoints: Vec<f64>,
    /// Initial logistic warp as `k,center` in original units.
    #[arg(long, value_delimiter = ',')]
    warp_init: Option<Vec<f64>>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
}

impl FitOptions {
    fn config(&self) -> FitConfig {
        let mut cfg = FitConfig {
            alpha: self.alpha,
            sigma2: self.sigma2,
            ..FitConfig::default()
        };
        if let Some(s) = self.steps {
            cfg.steps_per_unit = s;
        }
        if let Some(v) = self.max_iters {
            cfg.optim.max_iters = v;
        }
        if let Some(v) = self.rel_tol {
            cfg.optim.rel_tol = v;
        }
        if let Some(v) = self.grad_tol {
            cfg.optim.grad_tol = v;
        }
        if let Some(v) = self.max_outer {
            cfg.warp.max_outer = v;
        }
        cfg
    }

    fn fit(&self, data: &Dataset, cfg: &FitConfig) -> grassreg::Result<(FittedModel, FitReport)> {
        match self.kind {
            Kind::Std => fit_std_ggr(data, cfg).map(|(m, r)| (FittedModel::Std(m), r)),
            Kind::Tw => {
                let init = match self.warp_init.as_deref() {
                    None => None,
                    Some(&[k, center]) => Some(TimeWarp::logistic(k, center)),
                    Some(_) => return Err(Error::InvalidArgument("--warp-init takes `k,center`".into())),
                };
                fit_tw_ggr(data, cfg, init).map(|(m, r)| (FittedModel::Tw(m), r))
            }
            Kind::Cs => fit_cs_ggr(data, cfg, &self.controls).map(|(m, r)| (FittedModel::Cs(m), r)),
            Kind::Piecewise => {
                fit_piecewise_std_ggr(data, cfg, &self.breakpoints).map(|(m, r, _)| (FittedModel::Piecewise(m), r))
            }
        }
    }
}

#[derive(Args)]
struct FitCmd {
    #[arg(long, short)]
    data: PathBuf,
    #[command(flatten)]
    options: FitOptions,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, short)]
    model: PathBuf,
    #[arg(long, short)]
    data: PathBuf,
    /// Ground-truth samples; adds the mean squared distance of the model to them.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Method {
    Curve,
    Nn,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long, short)]
    model: PathBuf,
    /// Training data; sets the search range and serves the nn baseline.
    #[arg(long, short)]
    training: PathBuf,
    /// Samples whose independent variable is predicted.
    #[arg(long, short)]
    queries: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Curve)]
    method: Method,
    /// Grid step as a fraction of the search range.
    #[arg(long, default_value_t = 0.05)]
    step: f64,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long, short)]
    data: PathBuf,
    /// One fold id per sample, in sorted order.
    #[arg(long, conflicts_with = "k")]
    plan: Option<PathBuf>,
    #[arg(long, required_unless_present = "plan")]
    k: Option<usize>,
    #[command(flatten)]
    options: FitOptions,
    #[arg(long, value_enum, default_value_t = Method::Curve)]
    method: Method,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, short)]
    model: PathBuf,
    /// Evaluate at the locations of this dataset.
    #[arg(long, conflicts_with_all = ["from", "to"])]
    at: Option<PathBuf>,
    #[arg(long, requires = "to")]
    from: Option<f64>,
    #[arg(long, requires = "from")]
    to: Option<f64>,
    #[arg(long, default_value_t = 101)]
    count: usize,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn emit(out: Option<&Path>, text: &str) -> grassreg::Result<()> {
    match out {
        Some(path) => io::write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json(value: &serde_json::Value) -> grassreg::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn synth(a: &SynthArgs) -> grassreg::Result<()> {
    let cfg = SynthConfig {
        num_points: a.num_points,
        freq_law: match a.law {
            Law::Std => FrequencyLaw::Std,
            Law::Logistic => FrequencyLaw::logistic(),
            Law::Sine => FrequencyLaw::sine(),
        },
        embed_dim: a.embed_dim,
        noise_sigma: a.noise,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let mut data = synthetic::generate_dataset(&cfg)?.dataset;
    if let Some(shoot_time) = a.perturb {
        let p = synthetic::PerturbConfig {
            shoot_time,
            seed: a.perturb_seed,
        };
        data = synthetic::perturb_along_manifold(&data, &p)?;
    }
    emit(a.out.as_deref(), &io::format_dataset(&DatasetFile::new(data))?)
}

fn shape_import(a: &ShapeArgs) -> grassreg::Result<()> {
    let layout = LandmarkLayout {
        leading: a.leading,
        r_field: a.r_field,
        landmarks: a.landmarks,
        dims: a.dims,
    };
    let records = io::parse_landmarks(&io::read_text(&a.input)?, &layout)?;
    let samples = records
        .iter()
        .map(|rec| {
            Ok(Sample {
                r: rec.r,
                point: represent::shape_to_grassmann(&rec.coordinates)?.point,
            })
        })
        .collect::<grassreg::Result<Vec<_>>>()?;
    let file = DatasetFile {
        dataset: Dataset::new(samples)?,
        units: a.units.clone(),
    };
    emit(a.out.as_deref(), &io::format_dataset(&file)?)
}

fn lds_import(a: &LdsArgs) -> grassreg::Result<()> {
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    for (idx, line) in io::read_text(&a.manifest)?.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (r, path) = t
            .split_once(|c: char| c == ',' || c.is_whitespace())
            .ok_or_else(|| Error::Format(format!("manifest line {}: expected `r,path`", idx + 1)))?;
        let r: f64 = r
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("manifest line {}: `{r}` is not a number", idx + 1)))?;
        let frames = io::parse_matrix(&io::read_text(&base.join(path.trim()))?)?.transpose();
        let cfg = IdentifyConfig {
            subtract_mean: !a.no_center,
            weights: a.gaussian_sigma.map(|s| represent::gaussian_weights(frames.ncols(), s)),
        };
        let lds = represent::identify_lds(&frames, a.p, &cfg)?;
        samples.push(Sample {
            r,
            point: represent::lds_to_grassmann(&lds)?,
        });
    }
    let file = DatasetFile {
        dataset: Dataset::new(samples)?,
        units: a.units.clone(),
    };
    emit(a.out.as_deref(), &io::format_dataset(&file)?)
}

fn fit(a: &FitCmd) -> grassreg::Result<()> {
    let data = io::read_dataset(&a.data)?.dataset;
    let cfg = a.options.config();
    let (model, report) = a.options.fit(&data, &cfg)?;
    emit(a.out.as_deref(), &io::format_model(&ModelFile::new(model, cfg, report))?)
}

fn evaluate(a: &EvalArgs) -> grassreg::Result<()> {
    let file = io::read_model(&a.model)?;
    let data = io::read_dataset(&a.data)?.dataset;
    let residual = eval::residual_sum(&data, &file.model)?;
    let r_squared = match eval::r_squared(&data, &file.model) {
        Ok(v) => Some(v),
        Err(Error::UndefinedRSquared) => None,
        Err(e) => return Err(e),
    };
    let mut out = json!({
        "kind": file.model.kind(),
        "samples": data.len(),
        "energy": file.report.energy,
        "data_term": file.report.data_term,
        "regularity_term": file.report.regularity_term,
        "residual_sum": residual,
        "mse": residual / data.len() as f64,
        "r_squared": r_squared,
    });
    if let Some(path) = &a.reference {
        let reference = io::read_dataset(path)?.dataset;
        let fitted = file.model.evaluate_many(&reference.r_values())?;
        out["msd_to_reference"] = json!(eval::mean_square_distance(&fitted, &reference.points())?);
    }
    emit_json(&out)
}

fn predict(a: &PredictArgs) -> grassreg::Result<()> {
    let model = io::read_model(&a.model)?.model;
    let training = io::read_dataset(&a.training)?.dataset;
    let queries = io::read_dataset(&a.queries)?.dataset;
    let r = training.r_values();
    let search = match a.method {
        Method::Curve => Some(eval::CurveSearch::new(
            &model,
            r[0],
            r[r.len() - 1],
            &PredictionConfig { step: a.step },
        )?),
        Method::Nn => None,
    };
    let mut out = String::from("index,r,predicted,abs_error\n");
    for (i, s) in queries.samples().iter().enumerate() {
        let predicted = match &search {
            Some(search) => search.predict(&s.point)?.r,
            None => eval::predict_nn_baseline(&training, &s.point)?,
        };
        out.push_str(&format!("{i},{:.16e},{:.16e},{:.16e}\n", s.r, predicted, (predicted - s.r).abs()));
    }
    emit(None, &out)
}

fn cv(a: &CvArgs) -> grassreg::Result<()> {
    let data = io::read_dataset(&a.data)?.dataset;
    let plan = match (&a.plan, a.k) {
        (Some(path), _) => io::parse_cv_plan(&io::read_text(path)?, data.len())?,
        (None, Some(k)) => CvPlan::k_fold(data.len(), k)?,
        (None, None) => return Err(Error::InvalidPlan("need a plan file or --k".into())),
    };
    let cfg = a.options.config();
    let predictor = match a.method {
        Method::Curve => Predictor::Curve(PredictionConfig { step: a.step }),
        Method::Nn => Predictor::NearestNeighbor,
    };
    let report = eval::run_cv(&data, &plan, |d| a.options.fit(d, &cfg), &predictor)?;
    emit_json(&serde_json::to_value(&report)?)
}

fn sample_curve(a: &SampleArgs) -> grassreg::Result<()> {
    let model = io::read_model(&a.model)?.model;
    let (r, units) = match (&a.at, a.from, a.to) {
        (Some(path), _, _) => {
            let f = io::read_dataset(path)?;
            (f.dataset.r_values(), f.units)
        }
        (None, Some(lo), Some(hi)) => {
            if a.count < 2 || !(hi > lo) {
                return Err(Error::InvalidArgument("need --count >= 2 and --to > --from".into()));
            }
            let step = (hi - lo) / (a.count - 1) as f64;
            ((0..a.count).map(|i| lo + i as f64 * step).collect(), None)
        }
        _ => return Err(Error::InvalidArgument("give --at or --from/--to".into())),
    };
    let points = model.evaluate_many(&r)?;
    let samples = r.iter().zip(points).map(|(&r, point)| Sample { r, point }).collect();
    let dataset = Dataset::with_normalization(samples, ggr::AffineMap::unit_interval(&r))?;
    emit(a.out.as_deref(), &io::format_dataset(&DatasetFile { dataset, units })?)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 3,
        Error::DimensionMismatch(_) => 4,
        Error::Degenerate(_) => 5,
        Error::RankDeficient(_) => 6,
        Error::CutLocus { .. } => 7,
        Error::Integration(_) => 8,
        Error::Divergence { .. } => 9,
        Error::DegenerateWarp { .. } => 10,
        Error::KarcherNonConvergence { .. } => 11,
        Error::UndefinedRSquared => 12,
        Error::InvalidPlan(_) => 13,
        Error::Format(_) | Error::Json(_) => 14,
        Error::Io(_) => 15,
    }
}

fn report_error(code: &str, message: &str, status: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "code": code, "message": message } }));
    ExitCode::from(status)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::UnknownArgument => "unknown-flag",
                clap::error::ErrorKind::InvalidSubcommand => "unknown-subcommand",
                _ => "usage",
            };
            return report_error(code, e.to_string().trim(), 2);
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::ShapeImport(a) => shape_import(a),
        Command::LdsImport(a) => lds_import(a),
        Command::Fit(a) => fit(a),
        Command::Eval(a) => evaluate(a),
        Command::Predict(a) => predict(a),
        Command::Cv(a) => cv(a),
        Command::SampleCurve(a) => sample_curve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(e.code(), &e.to_string(), exit_code(&e)),
    }
}
