//! Command-line front end.
//!
//! Every subcommand prints its main output to stdout, or, with `--out DIR`,
//! writes it into `DIR` together with `manifest.json` (command line, seed,
//! version, input hashes). Files are written under a `.partial` name and
//! renamed once complete.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::causal::{natural_direct_survival, sample_data, total_effect_survival, EffectQuery, SurvivalPair};
use crate::data::Dataset;
use crate::em::{fit, FitOptions, FitResult};
use crate::error::{Error, Result};
use crate::inference::{fit_standard_errors, identifiability_check};
use crate::model::{describe, param_layout, parse_model, validate, ModelSpec, ParamLayout};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "dagmix",
    version,
    about = "Categorical DAG models with latent nodes: fitting and causal effects"
)]
pub struct Cli {
    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a model by EM with multiple restarts.
    Fit(FitArgs),
    /// Draw a dataset from a model with given parameters.
    Simulate(SimulateArgs),
    /// Check local identifiability at random parameter points.
    Identify(IdentifyArgs),
    /// Evaluate total and natural direct effects.
    Effects(EffectsArgs),
    /// Print the model summary table.
    Describe(DescribeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Args, Debug)]
pub struct Common {
    /// Model document (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory; without it the result goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Data CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Random seed; a random one is drawn and recorded if omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub restarts: u64,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol_loglik: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol_param: f64,
    /// Reorder latent categories by their effect on the first child.
    #[arg(long)]
    pub canonicalize: bool,
    /// Skip standard errors.
    #[arg(long)]
    pub no_se: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Parameter file: a fit result or `{"beta": [...]}`.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Covariate value as NAME=VALUE, repeatable; unset covariates are zero.
    #[arg(long = "covariate")]
    pub covariates: Vec<String>,
    /// Also write the latent categories (latent.csv).
    #[arg(long)]
    pub latent: bool,
}

#[derive(Args, Debug)]
pub struct IdentifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub points: u64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EffectsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub params: PathBuf,
    /// Effect query document (JSON).
    #[arg(long)]
    pub query: PathBuf,
    /// Average effects over the covariate strata of this dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long = "covariate")]
    pub covariates: Vec<String>,
}

#[derive(Args, Debug)]
pub struct DescribeArgs {
    #[command(flatten)]
    pub common: Common,
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        // fails only if a global pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let command_line: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(&cli.command, &command_line) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            let record = json!({"error": e.kind(), "message": e.to_string(), "exit_code": code});
            eprintln!("{record}");
            code
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ScoringDiverged(_)
        | Error::SingularInformation { .. }
        | Error::Numerical(_)
        | Error::ZeroProbabilityCell { .. }
        | Error::ZeroReferenceSurvival
        | Error::InvalidCumulativeLogits
        | Error::NonPositiveProbability => EXIT_NUMERICAL,
        _ => EXIT_VALIDATION,
    }
}

fn dispatch(cmd: &Command, argv: &[String]) -> Result<()> {
    match cmd {
        Command::Fit(a) => run_fit(a, argv),
        Command::Simulate(a) => run_simulate(a, argv),
        Command::Identify(a) => run_identify(a, argv),
        Command::Effects(a) => run_effects(a, argv),
        Command::Describe(a) => run_describe(a, argv),
    }
}

// ---------------------------------------------------------------------------
// outputs

/// Collects named outputs and input hashes; writes them atomically.
struct Outputs<'a> {
    out: Option<&'a Path>,
    subcommand: &'static str,
    argv: &'a [String],
    seed: Option<u64>,
    inputs: Vec<Value>,
    files: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(out: Option<&'a Path>, subcommand: &'static str, argv: &'a [String]) -> Self {
        Self {
            out,
            subcommand,
            argv,
            seed: None,
            inputs: Vec::new(),
            files: Vec::new(),
        }
    }

    fn read_input(&mut self, path: &Path) -> Result<String> {
        let bytes =
            fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        self.inputs.push(json!({
            "path": path.display().to_string(),
            "sha256": hex(&Sha256::digest(&bytes)),
        }));
        String::from_utf8(bytes).map_err(|_| Error::Data(format!("{} is not UTF-8", path.display())))
    }

    /// Writes `name` into the output directory, or prints it if `to_stdout`
    /// and no directory is set.
    fn emit(&mut self, name: &str, content: &str, to_stdout: bool) -> Result<()> {
        match self.out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                write_atomic(&dir.join(name), content)?;
                self.files.push(name.to_string());
            }
            None if to_stdout => print!("{content}"),
            None => {}
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let Some(dir) = self.out else { return Ok(()) };
        let manifest = json!({
            "command": self.argv,
            "subcommand": self.subcommand,
            "seed": self.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "inputs": self.inputs,
            "outputs": self.files,
        });
        write_atomic(&dir.join("manifest.json"), &pretty(&manifest)?)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn pretty<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Numerical(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Writes to `<path>.partial` and renames on success; an interrupted write
/// leaves only the `.partial` file behind.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    fs::write(&partial, content)?;
    fs::rename(&partial, path)?;
    Ok(())
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn load_model(o: &mut Outputs, path: &Path) -> Result<ModelSpec> {
    let text = o.read_input(path)?;
    let model = parse_model(&text)?;
    let report = validate(&model);
    if let Some(v) = report.violations.first() {
        return Err(v.to_error());
    }
    Ok(model)
}

fn load_data(o: &mut Outputs, path: &Path, model: &ModelSpec) -> Result<Dataset> {
    let text = o.read_input(path)?;
    Dataset::from_csv(model, text.as_bytes())
}

#[derive(Deserialize)]
struct ParamFile {
    beta: Vec<f64>,
    #[serde(default)]
    labels: Option<Vec<String>>,
}

fn load_params(o: &mut Outputs, path: &Path, model: &ModelSpec, layout: &ParamLayout) -> Result<Vec<f64>> {
    let text = o.read_input(path)?;
    let p: ParamFile = serde_json::from_str(&text).map_err(|e| Error::Syntax(format!("{}: {e}", path.display())))?;
    if p.beta.len() != layout.len() {
        return Err(Error::Dimension(format!(
            "parameter file has {} values, model needs {}",
            p.beta.len(),
            layout.len()
        )));
    }
    if let Some(labels) = p.labels {
        if labels != layout.labels(model) {
            return Err(Error::Data("parameter labels do not match the model layout".into()));
        }
    }
    Ok(p.beta)
}

fn parse_covariates(model: &ModelSpec, pairs: &[String]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; model.covariate_names.len()];
    for pair in pairs {
        let (name, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("covariate `{pair}` is not NAME=VALUE")))?;
        let k = model
            .covariate_names
            .iter()
            .position(|c| c == name.trim())
            .ok_or_else(|| Error::Data(format!("unknown covariate `{name}`")))?;
        out[k] = value
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("covariate `{name}` has a non-numeric value")))?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// subcommands

#[derive(Serialize)]
struct FitReport<'a> {
    seed: u64,
    #[serde(flatten)]
    result: &'a FitResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    se_error: Option<String>,
}

fn run_fit(a: &FitArgs, argv: &[String]) -> Result<()> {
    let mut o = Outputs::new(a.common.out.as_deref(), "fit", argv);
    let model = load_model(&mut o, &a.common.model)?;
    let data = load_data(&mut o, &a.data, &model)?;
    let seed = resolve_seed(a.seed);
    o.seed = Some(seed);
    let options = FitOptions {
        max_iter: a.max_iter,
        tol_loglik: a.tol_loglik,
        tol_param: a.tol_param,
        n_restarts: a.restarts as usize,
        seed,
        canonicalize: a.canonicalize,
        ..FitOptions::default()
    };
    let mut result = fit(&model, &data, &options)?;
    let mut se_error = None;
    if !a.no_se {
        match fit_standard_errors(&model, &result.beta, &data) {
            Ok(se) => result.se = Some(se),
            Err(e) => se_error = Some(e.to_string()),
        }
    }
    let report = FitReport {
        seed,
        result: &result,
        se_error,
    };
    let format = a.common.format.unwrap_or(Format::Json);
    let json_text = pretty(&report)?;
    let table = estimates_table(&result);
    match format {
        Format::Json => o.emit("fit.json", &json_text, true)?,
        Format::Csv => {
            o.emit("fit.csv", &estimates_csv(&result)?, true)?;
            o.emit("fit.json", &json_text, false)?;
        }
        Format::Text => {
            o.emit("fit.txt", &table, true)?;
            o.emit("fit.json", &json_text, false)?;
        }
    }
    o.finish()
}

fn estimates_csv(r: &FitResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "estimate", "se"])?;
    for (k, (l, b)) in r.labels.iter().zip(&r.beta).enumerate() {
        let se = r.se.as_ref().map_or(String::new(), |s| s[k].to_string());
        w.write_record([l.clone(), b.to_string(), se])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn estimates_table(r: &FitResult) -> String {
    let width = r.labels.iter().map(|l| l.chars().count()).max().unwrap_or(5).max(5);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>10}  {:>10}", "param", "coeff", "se");
    for (k, (l, b)) in r.labels.iter().zip(&r.beta).enumerate() {
        let se = r.se.as_ref().map_or("-".to_string(), |s| format!("{:.4}", s[k]));
        let pad = width - l.chars().count();
        let _ = writeln!(s, "{l}{:pad$}  {b:>10.4}  {se:>10}", "");
    }
    let _ = writeln!(
        s,
        "\nloglik {:.4}  AIC {:.2}  BIC {:.2}  iterations {}  converged {}",
        r.loglik, r.aic, r.bic, r.iterations, r.converged
    );
    s
}

fn run_simulate(a: &SimulateArgs, argv: &[String]) -> Result<()> {
    let mut o = Outputs::new(a.common.out.as_deref(), "simulate", argv);
    let model = load_model(&mut o, &a.common.model)?;
    let layout = param_layout(&model);
    let beta = load_params(&mut o, &a.params, &model, &layout)?;
    let covs = parse_covariates(&model, &a.covariates)?;
    let seed = resolve_seed(a.seed);
    o.seed = Some(seed);
    let sample = sample_data(&model, &layout, &beta, a.n as usize, seed, &covs)?;
    let mut buf = Vec::new();
    sample.data.to_csv(&mut buf)?;
    o.emit("data.csv", &String::from_utf8(buf).expect("csv output is UTF-8"), true)?;
    if a.latent {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(model.latent().iter().map(|&i| model.nodes[i].name.as_str()))?;
        for row in &sample.latent {
            w.write_record(row.iter().map(usize::to_string))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        o.emit(
            "latent.csv",
            &String::from_utf8(bytes).expect("csv output is UTF-8"),
            false,
        )?;
    }
    o.finish()
}

fn run_identify(a: &IdentifyArgs, argv: &[String]) -> Result<()> {
    let mut o = Outputs::new(a.common.out.as_deref(), "identify", argv);
    let model = load_model(&mut o, &a.common.model)?;
    let seed = resolve_seed(a.seed);
    o.seed = Some(seed);
    let report = identifiability_check(&model, a.points as usize, seed)?;
    o.emit("identify.json", &pretty(&report)?, true)?;
    o.finish()
}

fn run_describe(a: &DescribeArgs, argv: &[String]) -> Result<()> {
    let mut o = Outputs::new(a.common.out.as_deref(), "describe", argv);
    let model = load_model(&mut o, &a.common.model)?;
    o.emit("describe.txt", &describe(&model), true)?;
    o.finish()
}

// ---------------------------------------------------------------------------
// effects

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryDoc {
    #[serde(default)]
    label: Option<String>,
    outcome: String,
    treatment: TreatmentDoc,
    #[serde(default)]
    mediators: Vec<String>,
    #[serde(default)]
    thresholds: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreatmentDoc {
    x1: serde_json::Map<String, Value>,
    x0: serde_json::Map<String, Value>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum QueryFile {
    Many { queries: Vec<QueryDoc> },
    One(QueryDoc),
}

#[derive(Clone, Debug, Serialize)]
pub struct EffectRow {
    pub label: String,
    pub kind: &'static str,
    pub outcome: String,
    pub treatment: Vec<String>,
    pub x1: Vec<usize>,
    pub x0: Vec<usize>,
    pub mediators: Vec<String>,
    pub thresholds: Vec<usize>,
    pub columns: Vec<String>,
    pub treated_survival: Vec<f64>,
    pub reference_survival: Vec<f64>,
    pub ratios: Vec<f64>,
}

fn node_by_name(model: &ModelSpec, name: &str) -> Result<usize> {
    model
        .position_of(name)
        .ok_or_else(|| Error::Query(format!("unknown node `{name}`")))
}

fn to_query(model: &ModelSpec, d: &QueryDoc) -> Result<EffectQuery> {
    let outcome = node_by_name(model, &d.outcome)?;
    let mut treatment = Vec::new();
    let mut x1 = Vec::new();
    let mut x0 = Vec::new();
    if d.treatment.x1.len() != d.treatment.x0.len() {
        return Err(Error::Query("x1 and x0 must set the same nodes".into()));
    }
    let level = |v: &Value, name: &str| {
        v.as_u64()
            .map(|x| x as usize)
            .ok_or_else(|| Error::Query(format!("level of `{name}` must be a non-negative integer")))
    };
    for (name, v1) in &d.treatment.x1 {
        let v0 = d
            .treatment
            .x0
            .get(name)
            .ok_or_else(|| Error::Query(format!("`{name}` is missing from x0")))?;
        treatment.push(node_by_name(model, name)?);
        x1.push(level(v1, name)?);
        x0.push(level(v0, name)?);
    }
    // keep treatment nodes in causal order
    let mut order: Vec<usize> = (0..treatment.len()).collect();
    order.sort_by_key(|&k| treatment[k]);
    let mediators = d
        .mediators
        .iter()
        .map(|m| node_by_name(model, m))
        .collect::<Result<Vec<_>>>()?;
    let thresholds = d
        .thresholds
        .clone()
        .unwrap_or_else(|| (1..model.nodes[outcome].n_categories).collect());
    let q = EffectQuery {
        outcome,
        treatment: order.iter().map(|&k| treatment[k]).collect(),
        x1: order.iter().map(|&k| x1[k]).collect(),
        x0: order.iter().map(|&k| x0[k]).collect(),
        mediators,
        thresholds,
    };
    q.validate(model)?;
    Ok(q)
}

fn default_label(model: &ModelSpec, q: &EffectQuery) -> String {
    let names: Vec<&str> = q.treatment.iter().map(|&t| model.nodes[t].name.as_str()).collect();
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    let base = if names.len() == 1 {
        format!("{} from {} to {}", names[0], q.x0[0], q.x1[0])
    } else {
        format!("({}) from ({}) to ({})", names.join(","), join(&q.x0), join(&q.x1))
    };
    if q.mediators.is_empty() {
        base
    } else {
        let m: Vec<&str> = q.mediators.iter().map(|&k| model.nodes[k].name.as_str()).collect();
        format!("{base}, excluding {}", m.join(","))
    }
}

/// Survival pair for one query, at fixed covariates or averaged over strata.
fn effect_pair(
    model: &ModelSpec,
    layout: &ParamLayout,
    beta: &[f64],
    q: &EffectQuery,
    strata: &[(Vec<f64>, f64)],
) -> Result<SurvivalPair<f64>> {
    let pairs = strata
        .iter()
        .map(|(covs, w)| {
            let pair = if q.mediators.is_empty() {
                total_effect_survival(model, layout, beta, q, covs)?
            } else {
                natural_direct_survival(model, layout, beta, q, covs)?
            };
            Ok((pair, *w))
        })
        .collect::<Result<Vec<_>>>()?;
    SurvivalPair::average(&pairs).ok_or_else(|| Error::Data("no covariate strata".into()))
}

/// Evaluates every query of a query document.
pub fn evaluate_queries(
    model: &ModelSpec,
    beta: &[f64],
    query_text: &str,
    strata: &[(Vec<f64>, f64)],
) -> Result<Vec<EffectRow>> {
    let layout = param_layout(model);
    let file: QueryFile = serde_json::from_str(query_text).map_err(|e| Error::Syntax(e.to_string()))?;
    let docs = match file {
        QueryFile::Many { queries } => queries,
        QueryFile::One(q) => vec![q],
    };
    docs.iter()
        .map(|d| {
            let q = to_query(model, d)?;
            let pair = effect_pair(model, &layout, beta, &q, strata)?;
            let ratios = pair.ratios()?;
            let yname = &model.nodes[q.outcome].name;
            Ok(EffectRow {
                label: d.label.clone().unwrap_or_else(|| default_label(model, &q)),
                kind: if q.mediators.is_empty() {
                    "total"
                } else {
                    "natural_direct"
                },
                outcome: yname.clone(),
                treatment: q.treatment.iter().map(|&t| model.nodes[t].name.clone()).collect(),
                x1: q.x1.clone(),
                x0: q.x0.clone(),
                mediators: q.mediators.iter().map(|&m| model.nodes[m].name.clone()).collect(),
                columns: q.thresholds.iter().map(|k| format!("{yname}>{}", k - 1)).collect(),
                thresholds: q.thresholds,
                treated_survival: pair.treated,
                reference_survival: pair.reference,
                ratios,
            })
        })
        .collect()
}

/// Aligned table: one row per query, one column per threshold. Queries with
/// different columns start a new header.
pub fn effects_table(rows: &[EffectRow]) -> String {
    let wl = rows.iter().map(|r| r.label.chars().count()).max().unwrap_or(0).max(6);
    let mut s = String::new();
    let mut current: Option<&[String]> = None;
    for r in rows {
        let wc = r.columns.iter().map(|c| c.chars().count()).max().unwrap_or(0).max(8);
        if current != Some(r.columns.as_slice()) {
            if current.is_some() {
                s.push('\n');
            }
            let _ = write!(s, "{:wl$}", "");
            for c in &r.columns {
                let _ = write!(s, "  {c:>wc$}");
            }
            s.push('\n');
            current = Some(&r.columns);
        }
        let pad = wl - r.label.chars().count();
        let _ = write!(s, "{}{:pad$}", r.label, "");
        for v in &r.ratios {
            let _ = write!(s, "  {v:>wc$.4}");
        }
        s.push('\n');
    }
    s
}

fn run_effects(a: &EffectsArgs, argv: &[String]) -> Result<()> {
    let mut o = Outputs::new(a.common.out.as_deref(), "effects", argv);
    let model = load_model(&mut o, &a.common.model)?;
    let layout = param_layout(&model);
    let beta = load_params(&mut o, &a.params, &model, &layout)?;
    let query = o.read_input(&a.query)?;
    let strata: Vec<(Vec<f64>, f64)> = match &a.data {
        Some(path) if model.has_covariates() => {
            let data = load_data(&mut o, path, &model)?;
            data.strata()
                .into_iter()
                .map(|s| {
                    let w = s.total();
                    (s.covariates, w)
                })
                .collect()
        }
        _ => vec![(parse_covariates(&model, &a.covariates)?, 1.0)],
    };
    let rows = evaluate_queries(&model, &beta, &query, &strata)?;
    let json_text = pretty(&json!({ "effects": rows }))?;
    let table = effects_table(&rows);
    let format = a.common.format.unwrap_or(Format::Text);
    o.emit("effects.json", &json_text, format == Format::Json)?;
    o.emit("effects.txt", &table, format != Format::Json)?;
    o.finish()
}
