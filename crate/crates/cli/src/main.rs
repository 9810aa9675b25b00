mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use shiftauc::features::parse_terms;
use shiftauc::inference::bootstrap_all;
use shiftauc::rng::{stream, Purpose};
use shiftauc::sim::{
    format_table, replicate_data, run_scenario, true_tau0, write_replicates_csv, DgpSpec, MetricsReport,
    Misspecification, ScenarioSpec, Shift, SimEstimator, SpecCell,
};
use shiftauc::{
    compare, load_cohort, Benchmark, BootstrapOptions, CiKind, Cohort, Error, EstimationData, EstimatorKind,
    EstimatorOptions, EstimatorTag, FeatureKind, FeatureMap, OutcomeBasis, Role, Schema, SummaryDocument, Ties,
};

#[derive(Parser)]
#[command(
    name = "shiftauc",
    version,
    about = "AUC estimation under covariate shift",
    args_override_self = true
)]
struct Cli {
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// File of key=value lines; command-line flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the target-population AUC of a biomarker.
    Estimate(EstimateArgs),
    /// Benchmark the AUCs of two cohorts to a common target.
    Compare(CompareArgs),
    /// Run a simulation scenario.
    Simulate(SimulateArgs),
    /// Write one simulated validation cohort, RWD sample and target summary.
    Fixture(FixtureArgs),
}

fn percentile_pair(s: &str) -> Result<(f64, f64), String> {
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    match s.split_once(',') {
        Some((lo, hi)) => Ok((parse(lo)?, parse(hi)?)),
        None => Err("expected LO,HI".into()),
    }
}

#[derive(Args, Clone)]
struct SchemaArgs {
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',', required = true)]
    covariates: Vec<String>,
    #[arg(long, default_value = "y")]
    y_col: String,
    #[arg(long, default_value = "d")]
    d_col: String,
    /// Design-weight column of the target sample.
    #[arg(long)]
    weight_col: Option<String>,
    /// Binary covariates (no squared term). Default: columns with only 0/1
    /// values in the validation cohort.
    #[arg(long, value_delimiter = ',')]
    binary: Option<Vec<String>>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Calibration feature map.
    #[arg(long, default_value = "g1", value_parser = ["g1", "g2"])]
    feature_map: String,
    /// Sampling-model terms such as `x1,x2^2,x1:x3` (default: the feature map).
    #[arg(long)]
    sampling_terms: Option<String>,
    /// Outcome-model terms shared by both response groups (default: main effects).
    #[arg(long)]
    outcome_terms: Option<String>,
    #[arg(long)]
    outcome_terms_d1: Option<String>,
    #[arg(long)]
    outcome_terms_d0: Option<String>,
    /// Weight truncation percentiles `LO,HI`.
    #[arg(long, value_parser = percentile_pair, default_value = "0.1,99.9")]
    truncate: (f64, f64),
    #[arg(long)]
    no_truncate: bool,
    #[arg(long, default_value = "strict")]
    ties: Ties,
}

#[derive(Args, Clone)]
struct BootArgs {
    /// Bootstrap resamples; 0 reports point estimates only.
    #[arg(long, default_value_t = 200)]
    n_boot: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "normal", value_parser = ["normal", "percentile"])]
    ci: String,
    /// Report file (default: standard output).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    validation: PathBuf,
    #[arg(long)]
    rwd: Option<PathBuf>,
    #[arg(long)]
    target_sample: Option<PathBuf>,
    /// JSON with `means`, `variances` and `interaction_means` keyed by covariate.
    #[arg(long)]
    target_summary: Option<PathBuf>,
    /// Estimators, or `all` (default: every estimator the inputs support).
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[command(flatten)]
    schema: SchemaArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    boot: BootArgs,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value = "mixture")]
    benchmark: Benchmark,
    #[arg(long, default_value = "cw")]
    estimator: EstimatorTag,
    #[command(flatten)]
    schema: SchemaArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    boot: BootArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    shift: Shift,
    /// Specification cell, or `all`.
    #[arg(long, default_value = "all")]
    spec_cell: String,
    /// Simulation estimators, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    estimators: Vec<String>,
    #[arg(long, default_value = "omit_x1")]
    misspec: Misspecification,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    boot: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 2_000_000)]
    oracle_size: usize,
    /// Directory for replicates.csv, metrics.json and table.txt.
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, default_value = "moderate")]
    shift: Shift,
    #[arg(long)]
    seed: u64,
    /// Replication index within the seed.
    #[arg(long, default_value_t = 0)]
    rep: u64,
    /// Directory for validation.csv, rwd.csv, summary.json and truth.json.
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

struct Failure {
    code: u8,
    kind: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_numerical() { 3 } else { 2 },
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "Usage".into(),
            message: message.into(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            kind: "Io".into(),
            message: format!("{}: {e}", path.display()),
        }
    }
}

type Outcome = Result<(), Failure>;

/// Writes every file to a temporary sibling first and renames only once all
/// contents are ready, so a failure leaves no partial output.
fn write_atomic(files: &[(PathBuf, Vec<u8>)]) -> Outcome {
    let mut staged = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Failure::io(&dir, e))?;
        tmp.write_all(bytes).map_err(|e| Failure::io(path, e))?;
        staged.push((tmp, path));
    }
    for (tmp, path) in staged {
        tmp.persist(path).map_err(|e| Failure::io(path, e.error))?;
    }
    Ok(())
}

fn emit(output: Option<&PathBuf>, value: &impl Serialize) -> Outcome {
    let bytes = json_bytes(value);
    match output {
        Some(p) => write_atomic(&[(p.clone(), bytes)]),
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| Failure::io(Path::new("<stdout>"), e)),
    }
}

fn schema(s: &SchemaArgs, design_weight: bool) -> Schema {
    let mut schema = Schema::new(&s.covariates);
    schema.y = Some(s.y_col.clone());
    schema.d = Some(s.d_col.clone());
    if design_weight {
        schema.design_weight = s.weight_col.clone();
    }
    schema
}

fn continuous_mask(s: &SchemaArgs, validation: &Cohort) -> Result<Vec<bool>, Failure> {
    match &s.binary {
        Some(bin) => {
            if let Some(bad) = bin.iter().find(|b| !s.covariates.contains(b)) {
                return Err(Error::MissingColumn(vec![bad.clone()]).into());
            }
            Ok(s.covariates.iter().map(|c| !bin.contains(c)).collect())
        }
        None => Ok((0..validation.p())
            .map(|j| !validation.rows().all(|r| r[j] == 0.0 || r[j] == 1.0))
            .collect()),
    }
}

fn options(m: &ModelArgs, names: &[String], mask: &[bool]) -> Result<EstimatorOptions, Failure> {
    let kind = if m.feature_map == "g2" {
        FeatureKind::G2
    } else {
        FeatureKind::G1
    };
    let p = names.len();
    let mut o = EstimatorOptions::new(FeatureMap::by_kind(kind, mask)?);
    if let Some(t) = &m.sampling_terms {
        o.sampling = FeatureMap::custom(p, parse_terms(t, names)?)?;
    }
    let terms = |t: &Option<String>| -> Result<Option<Vec<_>>, Error> {
        t.as_deref().map(|t| parse_terms(t, names)).transpose()
    };
    o.outcome = match (
        terms(&m.outcome_terms)?,
        terms(&m.outcome_terms_d1)?,
        terms(&m.outcome_terms_d0)?,
    ) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            return Err(Failure::usage(
                "--outcome-terms cannot be combined with per-group terms",
            ));
        }
        (Some(t), None, None) => OutcomeBasis::shared(p, t)?,
        (None, None, None) => OutcomeBasis::main_effects(p),
        (None, d1, d0) => {
            let main: Vec<_> = (0..p).map(shiftauc::Term::Main).collect();
            OutcomeBasis::new(p, d1.unwrap_or_else(|| main.clone()), d0.unwrap_or(main))?
        }
    };
    o.truncation = if m.no_truncate { None } else { Some(m.truncate) };
    o.ties = m.ties;
    Ok(o)
}

fn boot_options(b: &BootArgs) -> BootstrapOptions {
    let mut o = BootstrapOptions::new(b.n_boot, b.seed);
    o.ci = if b.ci == "percentile" {
        CiKind::Percentile
    } else {
        CiKind::Normal
    };
    o
}

fn load(path: &Path, role: Role, schema: &Schema) -> Result<Cohort, Failure> {
    if !path.exists() {
        return Err(Failure::io(path, "no such file"));
    }
    load_cohort(path, role, schema).map_err(Failure::from)
}

#[derive(Serialize)]
struct EstimateOutput {
    n_validation: usize,
    n_boot: usize,
    seed: u64,
    results: Vec<Value>,
}

fn cmd_estimate(a: &EstimateArgs) -> Outcome {
    let plain = schema(&a.schema, false);
    let validation = load(&a.validation, Role::Validation, &plain)?;
    let mut data = EstimationData::new(validation)?;
    if let Some(p) = &a.rwd {
        data = data.with_rwd(load(p, Role::Rwd, &plain)?)?;
    }
    if let Some(p) = &a.target_sample {
        data = data.with_target_sample(load(p, Role::TargetSample, &schema(&a.schema, true))?)?;
    }
    if let Some(p) = &a.target_summary {
        let text = fs::read_to_string(p).map_err(|e| Failure::io(p, e))?;
        let stats = SummaryDocument::from_json(&text)?.to_stats(&a.schema.covariates)?;
        data = data.with_target_summary(stats)?;
    }

    let tags: Vec<EstimatorTag> = match &a.estimators {
        Some(list) if list.len() == 1 && list[0] == "all" => EstimatorTag::ALL.to_vec(),
        Some(list) => list.iter().map(|s| s.parse()).collect::<Result<_, Error>>()?,
        None => EstimatorTag::ALL
            .into_iter()
            .filter(|t| (!t.needs_rwd() || data.rwd.is_some()) && (!t.needs_moments() || data.has_moments()))
            .collect(),
    };
    let mask = continuous_mask(&a.schema, &data.validation)?;
    let opts = options(&a.model, &a.schema.covariates, &mask)?;
    let kinds: Vec<EstimatorKind> = tags.iter().map(|&t| EstimatorKind::new(t, opts.clone())).collect();

    let results: Vec<Value> = if a.boot.n_boot == 0 {
        let session = shiftauc::Session::new(&data);
        kinds
            .iter()
            .map(|k| {
                session
                    .estimate(k)
                    .map(|e| serde_json::to_value(e).expect("serializable"))
            })
            .collect::<Result<_, Error>>()?
    } else {
        bootstrap_all(&kinds, &data, &boot_options(&a.boot))?
            .into_iter()
            .map(|r| r.map(|r| serde_json::to_value(r).expect("serializable")))
            .collect::<Result<_, Error>>()?
    };
    emit(
        a.boot.output.as_ref(),
        &EstimateOutput {
            n_validation: data.validation.n(),
            n_boot: a.boot.n_boot,
            seed: a.boot.seed,
            results,
        },
    )
}

fn cmd_compare(a: &CompareArgs) -> Outcome {
    let plain = schema(&a.schema, false);
    let ca = load(&a.a, Role::Validation, &plain)?;
    let cb = load(&a.b, Role::Validation, &plain)?;
    let pooled = Cohort::pooled(&ca, &cb, Role::Validation)?;
    let mask = continuous_mask(&a.schema, &pooled)?;
    let kind = EstimatorKind::new(a.estimator, options(&a.model, &a.schema.covariates, &mask)?);
    let report = compare(&ca, &cb, a.benchmark, &kind, &boot_options(&a.boot))?;
    emit(a.boot.output.as_ref(), &report)
}

fn cmd_simulate(a: &SimulateArgs) -> Outcome {
    let seed = a.seed.ok_or_else(|| Failure::usage("simulate requires --seed"))?;
    let mut spec = ScenarioSpec::new(a.shift, a.reps, a.boot, seed);
    spec.cells = if a.spec_cell == "all" {
        SpecCell::ALL.to_vec()
    } else {
        vec![a.spec_cell.parse()?]
    };
    spec.estimators = if a.estimators.len() == 1 && a.estimators[0] == "all" {
        SimEstimator::ALL.to_vec()
    } else {
        a.estimators.iter().map(|s| s.parse()).collect::<Result<_, Error>>()?
    };
    spec.misspecification = a.misspec;
    spec.oracle_size = a.oracle_size;
    let result = run_scenario(&spec)?;

    let mut csv = Vec::new();
    write_replicates_csv(&result, &mut csv)?;
    let json = json_bytes(&MetricsReport::from(&result));
    let table = format_table(&result).into_bytes();
    write_atomic(&[
        (a.output_dir.join("replicates.csv"), csv),
        (a.output_dir.join("metrics.json"), json),
        (a.output_dir.join("table.txt"), table),
    ])?;
    print!("{}", format_table(&result));
    Ok(())
}

#[derive(Serialize)]
struct Truth {
    shift: Shift,
    seed: u64,
    rep: u64,
    tau0: f64,
    tau0_half_width: f64,
}

fn summary_json(rwd: &Cohort) -> Value {
    let n = rwd.n() as f64;
    let names = rwd.column_names();
    let p = rwd.p();
    let mean: Vec<f64> = (0..p).map(|j| rwd.rows().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut means = serde_json::Map::new();
    let mut variances = serde_json::Map::new();
    let mut inter = serde_json::Map::new();
    for j in 0..p {
        means.insert(names[j].clone(), mean[j].into());
        let v = rwd.rows().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
        variances.insert(names[j].clone(), v.into());
        for k in j + 1..p {
            let m = rwd.rows().map(|r| r[j] * r[k]).sum::<f64>() / n;
            inter.insert(format!("{}:{}", names[j], names[k]), m.into());
        }
    }
    serde_json::json!({ "means": means, "variances": variances, "interaction_means": inter })
}

fn cmd_fixture(a: &FixtureArgs) -> Outcome {
    let dgp = DgpSpec::with_shift(a.shift);
    let (validation, rwd) = replicate_data(&dgp, a.seed, a.rep)?;
    let schema = Schema::new(&shiftauc::sim::COLUMNS);
    let mut v_csv = Vec::new();
    validation.write_csv(&schema, &mut v_csv)?;
    let mut r_csv = Vec::new();
    rwd.write_csv(&schema, &mut r_csv)?;
    let tau = true_tau0(&dgp, 2_000_000, &mut stream(a.seed, 0, Purpose::Oracle));
    let truth = Truth {
        shift: a.shift,
        seed: a.seed,
        rep: a.rep,
        tau0: tau.value,
        tau0_half_width: tau.half_width,
    };
    write_atomic(&[
        (a.output_dir.join("validation.csv"), v_csv),
        (a.output_dir.join("rwd.csv"), r_csv),
        (a.output_dir.join("summary.json"), json_bytes(&summary_json(&rwd))),
        (a.output_dir.join("truth.json"), json_bytes(&truth)),
    ])
}

fn json_bytes(v: &impl Serialize) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("serializable");
    b.push(b'\n');
    b
}

fn fail(f: &Failure) -> ExitCode {
    let body = serde_json::json!({ "error": { "kind": f.kind, "message": f.message, "exit_code": f.code } });
    eprintln!("{body}");
    ExitCode::from(f.code)
}

fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    let args = match config::merge(args) {
        Ok(a) => a,
        Err(m) => return fail(&Failure::usage(m)),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&Failure::usage(e.render().to_string().trim_end())),
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(&Failure::usage(e.to_string()));
        }
    }
    let outcome = match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fixture(a) => cmd_fixture(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(&f),
    }
}
