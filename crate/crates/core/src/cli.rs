//! Command-line front end.
//!
//! `estimate` prints the ATT and event-study table (optionally placebo rows
//! and a per-cohort table); `generate` writes a synthetic panel together
//! with a JSON file of its true effects. Text, JSON and CSV output are all
//! rendered from the same [`Report`] value.
//!
//! Exit codes: 0 success, 1 usage or output error, 2 invalid input,
//! 3 numerical failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dgp::{generate, CohortSpec, DgpSpec};
use crate::error::Error;
use crate::estimators::{estimate, EstimateOptions, EstimationResult};
use crate::inference::{confidence_interval, variance, VarianceMethod, VarianceOptions, VarianceResult};
use crate::panel::{load_panel, write_panel, ColumnNames, PanelDataset};
use crate::weights::{SolverOptions, WeightOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sdid-event", version, about = "Synthetic difference-in-differences event studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate cohort, event-study and ATT effects from a long-format CSV panel.
    Estimate(EstimateArgs),
    /// Write a synthetic staggered-adoption panel and its true effects.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlaceboRows {
    All,
    First(usize),
}

fn parse_placebo(s: &str) -> Result<PlaceboRows, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(PlaceboRows::All);
    }
    match s.parse::<usize>() {
        Ok(k) if k > 0 => Ok(PlaceboRows::First(k)),
        _ => Err(format!("expected `all` or a positive integer, got `{s}`")),
    }
}

fn parse_level(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(l) if l > 0.0 && l < 1.0 => Ok(l),
        _ => Err(format!("level must be a number in (0, 1), got `{s}`")),
    }
}

fn parse_nonneg(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a finite number >= 0, got `{s}`")),
    }
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Long-format CSV with one row per unit and period.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "unit")]
    unit: String,
    #[arg(long, default_value = "time")]
    time: String,
    #[arg(long, default_value = "outcome")]
    outcome: String,
    #[arg(long, default_value = "treatment")]
    treatment: String,
    /// Also report cohort-level effects.
    #[arg(long)]
    disag: bool,
    /// Report placebo effects: `all` or the first K (Placebo_0, Placebo_-1, ...).
    #[arg(long, value_parser = parse_placebo)]
    placebo: Option<PlaceboRows>,
    #[arg(long, value_enum, default_value = "bootstrap")]
    vce: VarianceMethod,
    /// Number of resampling replications.
    #[arg(long, default_value_t = 50)]
    brep: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Confidence level of the normal intervals.
    #[arg(long, default_value = "0.95", value_parser = parse_level)]
    level: f64,
    /// Relative duality-gap tolerance of the weight solver.
    #[arg(long, default_value = "1e-10", value_parser = parse_nonneg)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Use uniform unit and time weights (plain difference-in-differences).
    #[arg(long)]
    uniform_weights: bool,
    /// Write the fitted weights of every cohort to this CSV file.
    #[arg(long)]
    dump_weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Write the report here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads for resampling (0 = one per core).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Destination of the panel CSV.
    #[arg(long)]
    output: PathBuf,
    /// Destination of the true-effects JSON (default: `<output stem>.truth.json`).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Read the full generator spec from a JSON file.
    #[arg(long, conflicts_with_all = ["controls", "periods", "cohort", "effect", "unit_sd", "time_sd", "noise_sd", "seed"])]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    controls: usize,
    #[arg(long, default_value_t = 8)]
    periods: usize,
    /// Cohort as `ADOPTION:SIZE`; repeat for staggered designs.
    #[arg(long, value_parser = parse_cohort)]
    cohort: Vec<(usize, usize)>,
    /// True effects by event time, shared by all cohorts; the last value is
    /// carried forward.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    effect: Vec<f64>,
    #[arg(long, default_value = "1", value_parser = parse_nonneg)]
    unit_sd: f64,
    #[arg(long, default_value = "1", value_parser = parse_nonneg)]
    time_sd: f64,
    #[arg(long, default_value = "1", value_parser = parse_nonneg)]
    noise_sd: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn parse_cohort(s: &str) -> Result<(usize, usize), String> {
    let (a, n) = s
        .split_once(':')
        .ok_or_else(|| format!("expected ADOPTION:SIZE, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(a)?, parse(n)?))
}

/// Parses `args` (program name first) and runs the selected subcommand.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(stderr, "{}", e.render())
            } else {
                write!(stdout, "{}", e.render())
            };
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Estimate(args) => run_estimate(&args, stdout),
        Command::Generate(args) => run_generate(&args),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            let _ = writeln!(stderr, "error: {}", failure.message);
            failure.code
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() {
            EXIT_NUMERICAL
        } else {
            EXIT_INVALID
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn output_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: format!("cannot write {}: {e}", path.display()),
    }
}

fn run_estimate(args: &EstimateArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let file = File::open(&args.input).map_err(|e| Failure {
        code: EXIT_INVALID,
        message: format!("cannot read {}: {e}", args.input.display()),
    })?;
    let columns = ColumnNames {
        unit: args.unit.clone(),
        time: args.time.clone(),
        outcome: args.outcome.clone(),
        treatment: args.treatment.clone(),
    };
    let panel = load_panel(BufReader::new(file), &columns)?;

    let options = EstimateOptions {
        weights: WeightOptions {
            solver: SolverOptions {
                tolerance: args.tol,
                max_iter: args.max_iter,
            },
            uniform: args.uniform_weights,
        },
        require_convergence: true,
    };
    let variance_options = VarianceOptions {
        reps: args.brep,
        seed: args.seed,
        level: args.level,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| Failure {
            code: EXIT_USAGE,
            message: format!("cannot start worker threads: {e}"),
        })?;
    let (result, var) = pool.install(|| -> Result<_, Error> {
        let result = estimate(&panel, &options)?;
        let var = variance(args.vce, &panel, &options, &variance_options)?;
        Ok((result, var))
    })?;

    if let Some(path) = &args.dump_weights {
        let mut file = File::create(path).map_err(|e| output_failure(path, e))?;
        write_weights(&mut file, &panel, &result).map_err(|e| output_failure(path, e))?;
    }

    let report = Report::build(&panel, &result, &var, args.placebo, args.disag)?;
    let rendered = match args.format {
        Format::Text => report.to_text(),
        Format::Json => report.to_json(),
        Format::Csv => report.to_csv(),
    };
    match &args.output {
        Some(path) => std::fs::write(path, rendered).map_err(|e| output_failure(path, e)),
        None => stdout.write_all(rendered.as_bytes()).map_err(|e| Failure {
            code: EXIT_USAGE,
            message: format!("cannot write output: {e}"),
        }),
    }
}

fn run_generate(args: &GenerateArgs) -> Result<(), Failure> {
    let spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure {
                code: EXIT_INVALID,
                message: format!("cannot read {}: {e}", path.display()),
            })?;
            serde_json::from_str::<DgpSpec>(&text).map_err(|e| Failure {
                code: EXIT_INVALID,
                message: format!("invalid spec {}: {e}", path.display()),
            })?
        }
        None => DgpSpec {
            n_controls: args.controls,
            periods: args.periods,
            cohorts: args
                .cohort
                .iter()
                .map(|&(adoption, size)| CohortSpec {
                    adoption,
                    size,
                    effects: args.effect.clone(),
                })
                .collect(),
            unit_effect_sd: args.unit_sd,
            time_effect_sd: args.time_sd,
            factor: None,
            noise_sd: args.noise_sd,
            seed: args.seed,
        },
    };
    let (panel, truth) = generate(&spec)?;

    let mut file = File::create(&args.output).map_err(|e| output_failure(&args.output, e))?;
    write_panel(&mut file, &panel).map_err(|e| output_failure(&args.output, e))?;

    let truth_path = args
        .truth
        .clone()
        .unwrap_or_else(|| args.output.with_extension("truth.json"));
    let json = serde_json::to_string_pretty(&truth).expect("true effects serialize");
    std::fs::write(&truth_path, json + "\n").map_err(|e| output_failure(&truth_path, e))
}

fn write_weights(
    out: &mut dyn Write,
    panel: &PanelDataset,
    result: &EstimationResult,
) -> std::io::Result<()> {
    writeln!(out, "cohort,kind,label,value")?;
    for c in &result.cohorts {
        let controls = result.structure.control_indices.iter();
        for (&i, w) in controls.zip(&c.weights.omega) {
            writeln!(out, "{},omega,{},{}", c.cohort_label, panel.unit_labels()[i], w)?;
        }
        writeln!(out, "{},omega_intercept,,{}", c.cohort_label, c.weights.omega_intercept)?;
        for (t, l) in c.weights.lambda.iter().enumerate() {
            writeln!(out, "{},lambda,{},{}", c.cohort_label, panel.time_label(t + 1), l)?;
        }
        writeln!(out, "{},lambda_intercept,,{}", c.cohort_label, c.weights.lambda_intercept)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub label: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub n_treated: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CohortRow {
    pub cohort: i64,
    pub label: String,
    pub estimate: f64,
    pub n_treated: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub n_units: usize,
    pub n_controls: usize,
    pub n_treated: usize,
    pub n_periods: usize,
    pub t_post: usize,
    pub t_tr: usize,
    /// Placebo effects subtract the λ-weighted pre-treatment gap.
    pub placebo_centering: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report<'a> {
    pub metadata: Metadata,
    pub table: Vec<ReportRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cohort_table: Option<Vec<CohortRow>>,
    pub estimates: &'a EstimationResult,
    pub variance: &'a VarianceResult,
}

impl<'a> Report<'a> {
    fn build(
        panel: &PanelDataset,
        result: &'a EstimationResult,
        var: &'a VarianceResult,
        placebo: Option<PlaceboRows>,
        disag: bool,
    ) -> Result<Self, Error> {
        let level = var.ci_level;
        let row = |label: String, estimate: f64, se: Option<f64>, n_treated: usize| {
            let ci = se.map(|se| confidence_interval(estimate, se, level)).transpose()?;
            Ok::<_, Error>(ReportRow {
                label,
                estimate,
                se,
                ci_lower: ci.map(|c| c.0),
                ci_upper: ci.map(|c| c.1),
                n_treated,
            })
        };
        let s = &result.structure;
        let mut table = vec![row("ATT".into(), result.att, var.se_att, s.n_treated())?];
        for (&ell, e) in &result.event {
            let se = var.se_by_ell.get(&ell).copied().flatten();
            table.push(row(format!("Effect_{ell}"), e.estimate, se, e.n_treated)?);
        }
        if let Some(placebo) = placebo {
            let limit = match placebo {
                PlaceboRows::All => usize::MAX,
                PlaceboRows::First(k) => k,
            };
            // keys run from -(max a - 2) to 0; report 0, -1, -2, ...
            for (&ell, e) in result.placebo.iter().rev().take(limit) {
                let se = var.se_by_placebo.get(&ell).copied().flatten();
                table.push(row(format!("Placebo_{ell}"), e.estimate, se, e.n_treated)?);
            }
        }
        let cohort_table = disag.then(|| {
            result
                .cohorts
                .iter()
                .flat_map(|c| {
                    std::iter::once(CohortRow {
                        cohort: c.cohort_label,
                        label: "ATT".into(),
                        estimate: c.tau,
                        n_treated: c.n_treated,
                    })
                    .chain(c.dynamic.iter().map(|(ell, v)| CohortRow {
                        cohort: c.cohort_label,
                        label: format!("Effect_{ell}"),
                        estimate: *v,
                        n_treated: c.n_treated,
                    }))
                })
                .collect()
        });
        Ok(Report {
            metadata: Metadata {
                n_units: panel.n_units(),
                n_controls: panel.n_controls(),
                n_treated: panel.n_treated(),
                n_periods: panel.n_periods(),
                t_post: s.t_post,
                t_tr: s.t_tr,
                placebo_centering: "pre_gap",
            },
            table,
            cohort_table,
            estimates: result,
            variance: var,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("table,row,cohort,estimate,se,ci_lower,ci_upper,n_treated\n");
        for r in &self.table {
            out += &format!(
                "event,{},,{},{},{},{},{}\n",
                r.label,
                r.estimate,
                opt(r.se),
                opt(r.ci_lower),
                opt(r.ci_upper),
                r.n_treated
            );
        }
        for r in self.cohort_table.iter().flatten() {
            out += &format!(
                "cohort,{},{},{},,,,{}\n",
                r.label, r.cohort, r.estimate, r.n_treated
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let m = &self.metadata;
        let v = self.variance;
        let mut out = format!(
            "SDID event-study estimates\nN = {} ({} controls, {} treated), T = {}, T_post = {}\n",
            m.n_units, m.n_controls, m.n_treated, m.n_periods, m.t_post
        );
        out += &match v.method {
            VarianceMethod::None => "Variance: none\n".to_string(),
            method => format!(
                "Variance: {}, {} replications, seed {}, {}% CI\n",
                match method {
                    VarianceMethod::Bootstrap => "bootstrap",
                    _ => "placebo",
                },
                v.reps,
                v.seed,
                sig(v.ci_level * 100.0)
            ),
        };
        out += "\n";
        let opt = |v: Option<f64>| v.map(sig).unwrap_or_default();
        out += &format!(
            "{:<12} {:>12} {:>12} {:>12} {:>12} {:>6}\n",
            "", "Estimate", "SE", "CI lower", "CI upper", "N"
        );
        for r in &self.table {
            out += &format!(
                "{:<12} {:>12} {:>12} {:>12} {:>12} {:>6}\n",
                r.label,
                sig(r.estimate),
                opt(r.se),
                opt(r.ci_lower),
                opt(r.ci_upper),
                r.n_treated
            );
        }
        if let Some(rows) = &self.cohort_table {
            out += "\nCohort-specific effects\n";
            out += &format!("{:<8} {:<12} {:>12} {:>6}\n", "Cohort", "", "Estimate", "N");
            for r in rows {
                out += &format!(
                    "{:<8} {:<12} {:>12} {:>6}\n",
                    r.cohort,
                    r.label,
                    sig(r.estimate),
                    r.n_treated
                );
            }
        }
        out
    }
}

/// Six significant digits, `%g` style.
pub fn sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: String| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if !(-4..6).contains(&exp) {
        format!("{}e{}", trim(mantissa.to_string()), exp)
    } else {
        trim(format!("{:.*}", (5 - exp) as usize, x))
    }
}
