//! Command-line front end: generate synthetic outlooks, fit and apply
//! cross-outlook mappings, sweep label budgets, and run the estimation-error
//! and perturbation-bound studies.
//!
//! Conventions: standard output and written files carry only machine-readable
//! results; everything human-readable goes to standard error. Exit codes are
//! 0 on success, 2 on input or configuration errors, and 3 when a study's
//! property check fails. Given identical inputs and seeds, every command
//! writes byte-identical outputs regardless of thread count.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use outlook_map::config::{ExperimentConfig, Mode, OutlookRef};
use outlook_map::data_model::Outlook;
use outlook_map::eval::{
    run_multi_source_experiment, run_transfer_experiment, select_h, ExperimentReport,
    HSelectOptions, Method, TransferOptions,
};
use outlook_map::momap::{
    fit_multi_outlook, fit_two_outlooks_with, load_mapping_file, map_into_target,
    ClassFitDiagnostics, FitOptions, MappingFile, OutlookMapping,
};
use outlook_map::rng::{derive_seed, stream};
use outlook_map::study::{
    default_study_spec, run_robust_check, sample_complexity_study, RobustCheckOptions,
};
use outlook_map::synth::{
    sample_mixture, scale_spec_to_unit_second_moment, transform_outlook, GroundTruthTransform,
    MixtureSpec,
};
use outlook_map::{Error, Result};

#[derive(Parser)]
#[command(
    name = "outlook-map",
    version,
    about = "Align labeled datasets that describe the same phenomenon through different feature spaces"
)]
struct Cli {
    /// Cap the worker-thread count (default: one per logical CPU). Results
    /// do not depend on this; it only limits resource use.
    #[arg(long, global = true, env = "OUTLOOK_MAP_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a labeled outlook from a Gaussian-mixture spec.
    Gen(GenArgs),
    /// Fit a mapping between outlooks and store it as JSON.
    Fit(FitArgs),
    /// Apply a stored mapping to a CSV of labeled rows.
    Map(MapArgs),
    /// Sweep label budgets and write a per-method error report.
    Eval(EvalArgs),
    /// Run the estimation-error and perturbation-bound studies.
    Study(StudyArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Mixture spec JSON file.
    #[arg(long)]
    spec: PathBuf,

    /// Per-class sample counts, comma-separated (e.g. "100,100").
    #[arg(long)]
    counts: String,

    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output CSV path; companion files are written alongside it.
    #[arg(long)]
    out: PathBuf,

    /// Also emit a transformed copy of the sample: "identity", "random",
    /// or a path to a transform JSON file. Writes `<out stem>.transformed.csv`
    /// and `<out stem>.transform.json` next to the output.
    #[arg(long)]
    transform: Option<String>,

    /// Sample the spec as-is instead of normalizing it to unit second moment.
    #[arg(long)]
    raw: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Experiment config JSON in two-outlook or multi-outlook mode.
    #[arg(long)]
    config: PathBuf,

    /// Directions matched per class; overrides the config value.
    #[arg(long)]
    h: Option<usize>,

    /// Output mapping or model JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MapArgs {
    /// Mapping or model JSON produced by `fit`.
    #[arg(long)]
    mapping: PathBuf,

    /// Input CSV of labeled rows in the mapping's source space.
    #[arg(long)]
    input: PathBuf,

    /// For multi-outlook model files: which stored source mapping to apply.
    #[arg(long)]
    source_id: Option<String>,

    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Experiment config JSON in two-outlook or multi-source mode.
    #[arg(long)]
    config: PathBuf,

    /// Experiment seed; overrides the config value.
    #[arg(long)]
    seed: Option<u64>,

    /// Directions matched per class; overrides config `h`/`h_candidates`.
    #[arg(long)]
    h: Option<usize>,

    /// Base output path; `<out>.csv` and `<out>.json` are written.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    /// Experiment config JSON in study mode; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Study seed; overrides the config value.
    #[arg(long)]
    seed: Option<u64>,

    /// Base output path; `<out>.curve.csv` and `<out>.summary.json` are
    /// written.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Gen(args) => {
            init_thread_pool(cli.threads)?;
            cmd_gen(args)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Fit(args) => {
            cmd_fit(args, cli.threads)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Map(args) => {
            init_thread_pool(cli.threads)?;
            cmd_map(args)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval(args) => {
            cmd_eval(args, cli.threads)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Study(args) => cmd_study(args, cli.threads),
    }
}

/// Cap rayon's worker count when a limit was requested. Called at most once
/// per invocation, before any parallel work starts.
fn init_thread_pool(threads: Option<usize>) -> Result<()> {
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool setup failed: {e}")))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn parse_counts(text: &str) -> Result<Vec<usize>> {
    let mut counts = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        let n: usize = part.parse().map_err(|_| {
            Error::Config(format!(
                "counts must be comma-separated positive integers, got '{part}'"
            ))
        })?;
        if n == 0 {
            return Err(Error::Config(
                "every class needs at least one sample; got a zero count".into(),
            ));
        }
        counts.push(n);
    }
    Ok(counts)
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let spec = MixtureSpec::load(&args.spec)?;
    let counts = parse_counts(&args.counts)?;
    let spec = if args.raw {
        spec
    } else {
        eprintln!(
            "note: normalizing the mixture to unit second moment \
             (use --raw to sample the spec as-is)"
        );
        scale_spec_to_unit_second_moment(&spec)?
    };
    let outlook = sample_mixture(&spec, &counts, args.seed)?;
    outlook.save_csv(&args.out)?;
    eprintln!(
        "wrote {} rows ({} classes, {} features) to {}",
        outlook.num_samples(),
        outlook.num_classes(),
        outlook.dim(),
        args.out.display()
    );

    if let Some(kind) = &args.transform {
        let transform = match kind.as_str() {
            "identity" => GroundTruthTransform::identity(spec.d, spec.num_classes())?,
            "random" => GroundTruthTransform::random(
                spec.d,
                spec.num_classes(),
                derive_seed(args.seed, &[stream::TRANSFORM]),
            )?,
            path => GroundTruthTransform::load(path)?,
        };
        let transformed = transform_outlook(&outlook, &transform)?;
        let csv_path = args.out.with_extension("transformed.csv");
        let json_path = args.out.with_extension("transform.json");
        transformed.save_csv(&csv_path)?;
        transform.save(&json_path)?;
        eprintln!(
            "wrote transformed copy to {} and its transform to {}",
            csv_path.display(),
            json_path.display()
        );
    }
    Ok(())
}

/// Load every outlook a config references, honoring explicit ids.
fn load_config_outlooks(config: &ExperimentConfig) -> Result<Vec<Outlook>> {
    config.outlooks.iter().map(load_outlook).collect()
}

fn load_outlook(r: &OutlookRef) -> Result<Outlook> {
    let text =
        std::fs::read_to_string(&r.path).map_err(|e| Error::io(r.path.clone(), e))?;
    Outlook::from_csv_str(r.effective_id(), &text)
}

/// Resolve the two roles of a two-outlook config: the destination space
/// (target) and the outlook to be mapped into it (source).
fn pick_target_source<'a>(
    config: &ExperimentConfig,
    outlooks: &'a [Outlook],
) -> Result<(&'a Outlook, &'a Outlook)> {
    let target_id = config
        .target_id
        .clone()
        .unwrap_or_else(|| outlooks[0].id.clone());
    let target_idx = outlooks
        .iter()
        .position(|o| o.id == target_id)
        .ok_or_else(|| {
            Error::Config(format!(
                "target_id '{target_id}' does not name a configured outlook"
            ))
        })?;
    Ok((&outlooks[target_idx], &outlooks[1 - target_idx]))
}

fn report_fit_diagnostics(prefix: &str, diags: &[ClassFitDiagnostics]) {
    for d in diags {
        eprintln!(
            "{prefix}class {}: rotation objective {:.6e}",
            d.class, d.procrustes_objective
        );
        let sides = [
            (
                d.target_rank_deficient,
                "target",
                "covariance rank below the matched direction count",
            ),
            (
                d.source_rank_deficient,
                "source",
                "covariance rank below the matched direction count",
            ),
            (
                d.target_degenerate,
                "target",
                "negligible eigen-gap among the matched directions",
            ),
            (
                d.source_degenerate,
                "source",
                "negligible eigen-gap among the matched directions",
            ),
        ];
        for (flag, side, what) in sides {
            if flag {
                eprintln!(
                    "{prefix}warning: class {} {side} side: {what} \
                     (matched directions may be unstable)",
                    d.class
                );
            }
        }
    }
}

fn cmd_fit(args: &FitArgs, threads_flag: Option<usize>) -> Result<()> {
    let config = ExperimentConfig::load(&args.config)?;
    init_thread_pool(threads_flag.or(config.threads))?;
    let outlooks = load_config_outlooks(&config)?;
    let opts = FitOptions {
        winsor_fraction: config.effective_winsor(),
        ..FitOptions::default()
    };
    match config.mode {
        Mode::TwoOutlook => {
            let (target, source) = pick_target_source(&config, &outlooks)?;
            let h = match (args.h.or(config.h), &config.h_candidates) {
                (Some(h), _) => h,
                (None, Some(candidates)) => {
                    let select_opts = HSelectOptions {
                        knn_k: config.knn_k.unwrap_or(HSelectOptions::default().knn_k),
                        winsor_fraction: config.effective_winsor(),
                        seed: config.seed.unwrap_or(0),
                        ..HSelectOptions::default()
                    };
                    let h = select_h(target, source, candidates, &select_opts)?;
                    eprintln!(
                        "selected h = {h} from candidates {candidates:?} on a held-out split"
                    );
                    h
                }
                (None, None) => 1,
            };
            let fit = fit_two_outlooks_with(target, source, h, &opts)?;
            report_fit_diagnostics("", &fit.diagnostics);
            fit.mapping.save(&args.out)?;
            eprintln!(
                "wrote mapping '{}' -> '{}' (h = {}) to {}",
                fit.mapping.source_id,
                fit.mapping.target_id,
                fit.mapping.h,
                args.out.display()
            );
        }
        Mode::MultiOutlook => {
            let final_id = config
                .final_id
                .clone()
                .unwrap_or_else(|| outlooks[0].id.clone());
            let h = match (args.h.or(config.h), &config.h_candidates) {
                (Some(h), _) => h,
                (None, Some(_)) => {
                    return Err(Error::Config(
                        "h_candidates applies to two-outlook configs; give h explicitly \
                         for a multi-outlook fit"
                            .into(),
                    ));
                }
                (None, None) => 1,
            };
            let fit = fit_multi_outlook(&outlooks, &final_id, h, &opts)?;
            for (id, diags) in &fit.diagnostics {
                report_fit_diagnostics(&format!("[{id}] "), diags);
            }
            eprintln!("pairwise objective {:.6e}", fit.pairwise_objective);
            fit.model.save(&args.out)?;
            eprintln!(
                "wrote model with final outlook '{final_id}' ({} mappings, h = {h}) to {}",
                fit.model.mappings.len(),
                args.out.display()
            );
        }
        other => {
            return Err(Error::Config(format!(
                "fit applies to two-outlook or multi-outlook mode, not {}",
                other.as_str()
            )));
        }
    }
    Ok(())
}

fn cmd_map(args: &MapArgs) -> Result<()> {
    let file = load_mapping_file(&args.mapping)?;
    let mapping: &OutlookMapping = match &file {
        MappingFile::Two(m) => {
            if let Some(id) = &args.source_id
                && id != &m.source_id {
                    return Err(Error::Config(format!(
                        "this mapping consumes outlook '{}', not '{id}'",
                        m.source_id
                    )));
                }
            m
        }
        MappingFile::Multi(model) => {
            let available = || model.mappings.keys().cloned().collect::<Vec<_>>().join(", ");
            let id = args.source_id.as_ref().ok_or_else(|| {
                Error::Config(format!(
                    "the model stores one mapping per source ({}); pick one with --source-id",
                    available()
                ))
            })?;
            model.mappings.get(id).ok_or_else(|| {
                Error::Config(format!(
                    "no mapping for source '{id}'; the model covers: {}",
                    available()
                ))
            })?
        }
    };
    let input = Outlook::load_csv(&args.input)?;
    let mapped = map_into_target(mapping, &input.features, &input.labels)?;
    let mapped_outlook = Outlook::new(input.id.clone(), mapped, input.labels.clone())?;
    mapped_outlook.save_csv(&args.out)?;
    eprintln!(
        "mapped {} rows from '{}' space into '{}' space -> {}",
        mapped_outlook.num_samples(),
        mapping.source_id,
        mapping.target_id,
        args.out.display()
    );
    Ok(())
}

/// Build sweep options from the config, applying command-line overrides.
fn sweep_options(config: &ExperimentConfig, seed_flag: Option<u64>) -> TransferOptions {
    let mut opts = TransferOptions::default();
    if let Some(fractions) = &config.label_fractions {
        opts.label_fractions = fractions.clone();
    }
    if let Some(folds) = config.folds {
        opts.folds = folds;
    }
    if let Some(seed) = seed_flag.or(config.seed) {
        opts.seed = seed;
    }
    if let Some(k) = config.knn_k {
        opts.knn_k = k;
    }
    opts.winsor_fraction = config.effective_winsor();
    if let Some(methods) = &config.methods {
        opts.methods = methods.clone();
    }
    opts
}

fn cmd_eval(args: &EvalArgs, threads_flag: Option<usize>) -> Result<()> {
    let config = ExperimentConfig::load(&args.config)?;
    init_thread_pool(threads_flag.or(config.threads))?;
    let outlooks = load_config_outlooks(&config)?;
    let mut opts = sweep_options(&config, args.seed);

    let report: ExperimentReport = match config.mode {
        Mode::TwoOutlook => {
            let (target, source) = pick_target_source(&config, &outlooks)?;
            opts.h = match (args.h.or(config.h), &config.h_candidates) {
                (Some(h), _) => h,
                (None, Some(candidates)) => {
                    let select_opts = HSelectOptions {
                        knn_k: opts.knn_k,
                        winsor_fraction: opts.winsor_fraction,
                        seed: opts.seed,
                        ..HSelectOptions::default()
                    };
                    let h = select_h(target, source, candidates, &select_opts)?;
                    eprintln!(
                        "selected h = {h} from candidates {candidates:?} on a held-out split"
                    );
                    h
                }
                (None, None) => opts.h,
            };
            run_transfer_experiment(target, source, &opts)?
        }
        Mode::MultiSource => {
            opts.h = match (args.h.or(config.h), &config.h_candidates) {
                (Some(h), _) => h,
                (None, Some(_)) => {
                    return Err(Error::Config(
                        "h_candidates applies to two-outlook evaluation; give h \
                         explicitly for multi-source mode"
                            .into(),
                    ));
                }
                (None, None) => opts.h,
            };
            if config.methods.is_none() {
                // The rotating-role protocol evaluates the mapped-training
                // regime only; baselines are meaningful per pair, not per
                // rotation.
                opts.methods = vec![Method::Momap];
            }
            run_multi_source_experiment(&outlooks, &opts)?
        }
        other => {
            return Err(Error::Config(format!(
                "eval applies to two-outlook or multi-source mode, not {}",
                other.as_str()
            )));
        }
    };

    let csv_path = args.out.with_extension("csv");
    let json_path = args.out.with_extension("json");
    write_text(&csv_path, &report.to_csv_string())?;
    write_text(&json_path, &report.to_json_string()?)?;
    for agg in &report.aggregates {
        eprintln!(
            "{} fraction {}: mean BER {:.4} over {} cells (std {:.4})",
            agg.method, agg.fraction, agg.mean_ber, agg.num_cells, agg.std_ber
        );
    }
    eprintln!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn cmd_study(args: &StudyArgs, threads_flag: Option<usize>) -> Result<ExitCode> {
    let config = match &args.config {
        Some(path) => {
            let config = ExperimentConfig::load(path)?;
            if config.mode != Mode::Study {
                return Err(Error::Config(format!(
                    "study needs a study-mode config, got {} mode",
                    config.mode.as_str()
                )));
            }
            config
        }
        None => ExperimentConfig::from_json_str(r#"{"mode": "study"}"#)?,
    };
    init_thread_pool(threads_flag.or(config.threads))?;
    let seed = args.seed.or(config.seed).unwrap_or(0);
    let study = config.study.clone().unwrap_or_default();

    let spec = match &study.mixture_spec {
        Some(path) => MixtureSpec::load(path)?,
        None => default_study_spec(),
    };
    let transform = match &study.transform {
        Some(path) => GroundTruthTransform::load(path)?,
        None => GroundTruthTransform::random(
            spec.d,
            spec.num_classes(),
            derive_seed(seed, &[stream::TRANSFORM]),
        )?,
    };
    let sizes = study.sizes.clone().unwrap_or_else(|| vec![50, 200, 800, 3200]);
    let seeds_per_size = study.seeds_per_size.unwrap_or(20);
    let h = study.h.unwrap_or(2);
    let curve = sample_complexity_study(&spec, &transform, &sizes, seeds_per_size, h, seed)?;

    let mut robust_opts = RobustCheckOptions {
        seed,
        ..RobustCheckOptions::default()
    };
    if let Some(n) = study.num_instances {
        robust_opts.num_instances = n;
    }
    if let Some(rhos) = &study.rho_values {
        robust_opts.rho_values = rhos.clone();
    }
    if let Some(m) = study.mc_samples {
        robust_opts.mc_samples = m;
    }
    let robust = run_robust_check(&robust_opts)?;

    let curve_path = args.out.with_extension("curve.csv");
    let summary_path = args.out.with_extension("summary.json");
    write_text(&curve_path, &curve.to_csv_string())?;
    let summary = serde_json::json!({ "complexity": &curve, "robust": &robust });
    let summary_text = serde_json::to_string_pretty(&summary)?;
    write_text(&summary_path, &summary_text)?;
    println!("{summary_text}");

    let medians_non_increasing = curve.medians.windows(2).all(|w| w[1] <= w[0]);
    eprintln!(
        "robust check ({} instances, budgets {:?}, {} draws each): \
         max sampled excess over the nominal+budget bound {:.3e}, \
         max analytic attainment gap {:.3e} (both must be within 1e-9): {}",
        robust.num_instances,
        robust.rho_values,
        robust.mc_samples,
        robust.max_violation,
        robust.max_analytic_gap,
        if robust.passed { "pass" } else { "FAIL" }
    );
    eprintln!(
        "estimation-error medians across per-class sizes {:?}: {:?} -- {}",
        curve.sample_sizes,
        curve.medians,
        if medians_non_increasing {
            "non-increasing"
        } else {
            "INCREASING"
        }
    );
    eprintln!("wrote {} and {}", curve_path.display(), summary_path.display());

    if robust.passed && medians_non_increasing {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("property check failed");
        Ok(ExitCode::from(3))
    }
}
