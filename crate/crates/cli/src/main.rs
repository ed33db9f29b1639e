use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sdarl_core::datagen::generate_replication;
use sdarl_core::dataio::{fmt_f64, read_config_map, read_sparse_text, ConfigMap, SparseTextDataset};
use sdarl_core::experiment::{
    config_text, emit_with_cross_check, gamma_support_size, preset, run_method, spec_from_config, summarize,
    summary_csv, summary_table, to_config_map, BenchOptions, ExperimentSpec, LoadedSpec, Method, MethodFit,
    PRESET_NAMES,
};
use sdarl_core::metrics::{classification_accuracy, discovery_rates, relative_error};
use sdarl_core::verify::{run_verification, VerifyOptions};
use sdarl_core::{Error, Loss, LossKind, Model};

/// Sparse regression by support detection with a line search.
#[derive(Parser)]
#[command(name = "sdarl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one synthetic dataset and write it in sparse text format.
    Gen {
        #[command(flatten)]
        cfg: ConfigFlags,
        /// Output file for the data.
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV of the true coefficients (1-based feature index).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Replication index of the draw.
        #[arg(long, default_value_t = 0)]
        rep: u64,
    },
    /// Fit one instance and print the full trajectory.
    Fit {
        #[command(flatten)]
        cfg: ConfigFlags,
        /// sdarl, fixed_step or asdarl (defaults to the first configured method).
        #[arg(long)]
        method: Option<String>,
        #[arg(long, default_value_t = 0)]
        rep: u64,
        /// Write the per-iteration trajectory as CSV.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Run the adaptive path over T and print every score.
    Tune {
        #[command(flatten)]
        cfg: ConfigFlags,
        #[arg(long, default_value_t = 0)]
        rep: u64,
    },
    /// Replicated benchmark: per-replication CSV plus a summary.
    Bench {
        #[command(flatten)]
        cfg: ConfigFlags,
        /// Directory for the output CSV files.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Record wall time per cell (the CSV is then run-dependent).
        #[arg(long)]
        wall_time: bool,
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Print the resolved config and exit.
        #[arg(long)]
        print_config: bool,
        /// List the built-in presets and exit.
        #[arg(long)]
        list_presets: bool,
    },
    /// Run the verification battery; exit code 3 if any property fails.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Problems in the solver invariant matrix.
        #[arg(long, default_value_t = 120)]
        matrix_runs: usize,
        /// Test hook: perturb the analytic gradient.
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

macro_rules! config_flags {
    ($($field:ident),* $(,)?) => {
        /// Every config key as a flag; flags override the config file, which
        /// overrides the preset and the built-in defaults.
        #[derive(Args, Default)]
        struct ConfigFlags {
            /// Config file of `key = value` lines.
            #[arg(long)]
            config: Option<PathBuf>,
            /// Start from a built-in preset.
            #[arg(long)]
            preset: Option<String>,
            $(
                #[arg(long, value_name = "VALUE")]
                $field: Option<String>,
            )*
        }

        impl ConfigFlags {
            fn overrides(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field), v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

config_flags!(
    name, model, n, p, k, t, rho, r, sigma1, design, coef, split, seed, reps, methods, tau0, nu, sigma, max_outer, m_max,
    grad_tol, newton_max_iter, alpha, q, criterion, folds, cv_seed, gamma, intercept, data, labels, sweep_n, sweep_p,
    sweep_k, sweep_rho,
);

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidArgument(_) | Error::BudgetExceeded(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn in_file(path: &Path, e: Error) -> Failure {
    let mut f = Failure::from(e);
    f.message = format!("{}: {}", path.display(), f.message);
    f
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type CliResult = std::result::Result<(), Failure>;

fn load_spec(flags: &ConfigFlags) -> std::result::Result<LoadedSpec, Failure> {
    let mut map = ConfigMap::new();
    if let Some(name) = &flags.preset {
        let spec = preset(name)
            .ok_or_else(|| usage(format!("unknown preset `{name}`; known: {}", PRESET_NAMES.join(", "))))?;
        map = to_config_map(&spec);
    }
    if let Some(path) = &flags.config {
        map.extend(read_config_map(path).map_err(|e| in_file(path, e))?);
    }
    for (key, value) in flags.overrides() {
        // config keys are case-insensitive; drop any spelling the file used
        map.retain(|k, _| !k.eq_ignore_ascii_case(key));
        map.insert(key.to_string(), (value.to_string(), 0));
    }
    Ok(spec_from_config(&map)?)
}

fn echo_defaults(loaded: &LoadedSpec) {
    if !loaded.defaults_applied.is_empty() {
        eprintln!("defaults: {}", loaded.defaults_applied.join("; "));
    }
}

/// The loss to fit plus, for synthetic draws, the data needed for metrics.
struct Problem {
    loss: Model,
    t: usize,
    truth: Option<sdarl_core::datagen::Dataset>,
    /// Rows used for accuracy (test rows, or training rows without a split).
    car_rows: Vec<usize>,
    design: sdarl_core::DenseMatrix,
    response: Vec<f64>,
}

fn load_problem(spec: &ExperimentSpec, rep: u64) -> std::result::Result<Problem, Failure> {
    if let Some(path) = &spec.data {
        let data = read_sparse_text(path, spec.label_mode).map_err(|e| in_file(path, e))?;
        if data.dropped_rows > 0 || !data.zero_columns.is_empty() {
            eprintln!(
                "note: dropped {} vacant rows; {} all-zero columns are never selected",
                data.dropped_rows,
                data.zero_columns.len()
            );
        }
        let loss = data.to_model(spec.gen.model, spec.intercept)?;
        let t = spec.t.unwrap_or_else(|| gamma_support_size(spec.gamma, data.n(), loss.n_eligible()));
        return Ok(Problem {
            loss,
            t,
            truth: None,
            car_rows: (0..data.n()).collect(),
            design: data.design,
            response: data.response,
        });
    }
    let cell = spec.cells()?.swap_remove(0);
    let data = generate_replication(&cell.gen, rep)?;
    let loss = data.train_loss()?;
    let loss = match loss {
        Model::Linear(l) if !spec.intercept => {
            Model::Linear(sdarl_core::LinearLoss::new(l.design().clone(), l.response().to_vec(), false)?)
        }
        other => other,
    };
    let car_rows = if data.test_rows.is_empty() { data.train_rows.clone() } else { data.test_rows.clone() };
    Ok(Problem {
        loss,
        t: cell.support_size(),
        car_rows,
        design: data.design.clone(),
        response: data.response.clone(),
        truth: Some(data),
    })
}

fn print_quality(problem: &Problem, fit: &MethodFit) -> std::result::Result<(), Failure> {
    let support = fit.beta.effective_support();
    if let Some(d) = &problem.truth {
        let are = relative_error(&fit.beta, &d.beta_star)?;
        let rates = discovery_rates(&support, d.true_support())?;
        println!(
            "ARE {}  PDR {:.4}  FDR {:.4}  CDR {:.4}",
            fmt_f64(are),
            rates.pdr,
            rates.fdr,
            rates.cdr
        );
    }
    if problem.loss.kind() == LossKind::Logistic {
        let car = classification_accuracy(&problem.design, &problem.response, &fit.beta, &problem.car_rows)?;
        let which = if problem.truth.as_ref().is_some_and(|d| !d.test_rows.is_empty()) { "test" } else { "training" };
        println!("CAR ({which}) {car:.4}");
    }
    Ok(())
}

fn cmd_gen(cfg: &ConfigFlags, out: &Path, truth: Option<&Path>, rep: u64) -> CliResult {
    let loaded = load_spec(cfg)?;
    echo_defaults(&loaded);
    let spec = &loaded.spec;
    if spec.data.is_some() {
        return Err(usage("gen draws synthetic data; drop `data`"));
    }
    let cell = spec.cells()?.swap_remove(0);
    let d = generate_replication(&cell.gen, rep)?;
    let rows = (0..d.design.nrows())
        .map(|i| d.design.row(i).into_iter().enumerate().filter(|(_, v)| *v != 0.0).collect())
        .collect();
    let text = SparseTextDataset {
        labels: d.response.clone(),
        rows,
        p: d.design.ncols(),
    };
    sdarl_core::dataio::write_sparse_text(out, &text)?;
    if let Some(path) = truth {
        let mut s = String::from("feature,value\n");
        for (j, v) in d.beta_star.iter() {
            s.push_str(&format!("{},{}\n", j + 1, fmt_f64(v)));
        }
        fs::write(path, s)?;
    }
    println!(
        "wrote {} rows x {} features ({} model, K = {}) to {}",
        d.design.nrows(),
        d.design.ncols(),
        d.model.as_str(),
        d.beta_star.l0(),
        out.display()
    );
    Ok(())
}

fn trajectory_csv(fit: &sdarl_core::FitResult) -> String {
    let mut s = String::from("iter,loss,tau,backtracks,active_size\n");
    for (k, f) in fit.loss_trajectory.iter().enumerate() {
        let (tau, m) = match k.checked_sub(1) {
            Some(i) if i < fit.tau_history.len() => (fmt_f64(fit.tau_history[i]), fit.backtracks[i].to_string()),
            _ => (String::new(), String::new()),
        };
        let size = fit.active_set_history.get(k).map_or(String::new(), |a| a.len().to_string());
        s.push_str(&format!("{k},{},{tau},{m},{size}\n", fmt_f64(*f)));
    }
    s
}

fn cmd_fit(cfg: &ConfigFlags, method: Option<&str>, rep: u64, dump: Option<&Path>) -> CliResult {
    let loaded = load_spec(cfg)?;
    echo_defaults(&loaded);
    let spec = &loaded.spec;
    let method = match method {
        Some(m) => Method::parse(m).ok_or_else(|| usage(format!("unknown method `{m}`")))?,
        None => spec.methods[0],
    };
    let problem = load_problem(spec, rep)?;
    let fit = run_method(&problem.loss, method, problem.t, spec)?;
    println!(
        "{} fit: n = {}, p = {}, T = {}",
        method.as_str(),
        problem.loss.n_samples(),
        problem.loss.n_features(),
        fit.t
    );
    let traj = trajectory_csv(&fit.fit);
    print!("{}", traj.replace(',', "\t"));
    println!(
        "termination {} after {} iterations",
        fit.fit.termination.as_str(),
        fit.fit.iterations
    );
    for w in &fit.fit.warnings {
        println!("warning: {w:?}");
    }
    let support: Vec<String> = fit.beta.iter().filter(|(_, v)| *v != 0.0).map(|(j, v)| format!("{}:{v:.6}", j + 1)).collect();
    println!("support ({}): {}", support.len(), support.join(" "));
    print_quality(&problem, &fit)?;
    if let Some(path) = dump {
        fs::write(path, traj)?;
    }
    Ok(())
}

fn cmd_tune(cfg: &ConfigFlags, rep: u64) -> CliResult {
    let loaded = load_spec(cfg)?;
    echo_defaults(&loaded);
    let spec = &loaded.spec;
    let problem = load_problem(spec, rep)?;
    let fit = run_method(&problem.loss, Method::Asdarl, problem.t, spec)?;
    let path = fit.path.as_ref().expect("adaptive fits carry their path");
    println!("Q = {}, null score {}", path.q, fmt_f64(path.null_score));
    println!("T\tscore\titers\ttermination");
    for (i, e) in path.entries.iter().enumerate() {
        let mark = if i == path.selected { " *" } else { "" };
        println!(
            "{}\t{}\t{}\t{}{mark}",
            e.t,
            fmt_f64(e.score),
            e.fit.iterations,
            e.fit.termination.as_str()
        );
    }
    println!("selected T = {} ({} nonzeros)", fit.t, fit.beta.effective_l0());
    print_quality(&problem, &fit)?;
    Ok(())
}

fn cmd_bench(
    cfg: &ConfigFlags,
    out_dir: &Path,
    opts: BenchOptions,
    print_config: bool,
    list_presets: bool,
) -> CliResult {
    if list_presets {
        for name in PRESET_NAMES {
            println!("{name}");
        }
        return Ok(());
    }
    let loaded = load_spec(cfg)?;
    let spec = &loaded.spec;
    if print_config {
        print!("{}", config_text(&to_config_map(spec)));
        return Ok(());
    }
    echo_defaults(&loaded);
    let records = sdarl_core::experiment::run_bench(spec, opts)?;
    let (reps_csv, summary) = emit_with_cross_check(&records)?;
    fs::create_dir_all(out_dir)?;
    let reps_path = out_dir.join(format!("{}_reps.csv", spec.name));
    let summary_path = out_dir.join(format!("{}_summary.csv", spec.name));
    fs::File::create(&reps_path)?.write_all(&reps_csv)?;
    fs::write(&summary_path, summary)?;
    let rows = summarize(&records);
    if !spec.sweeps.is_empty() {
        for m in &spec.methods {
            let mine: Vec<_> = rows.iter().filter(|r| r.method == m.as_str()).cloned().collect();
            fs::write(out_dir.join(format!("{}_{}_sweep.csv", spec.name, m.as_str())), summary_csv(&mine))?;
        }
    }
    print!("{}", summary_table(&rows));
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        eprintln!("{failed} cells failed; see the status column");
    }
    println!("wrote {} and {}", reps_path.display(), summary_path.display());
    Ok(())
}

fn cmd_verify(opts: VerifyOptions) -> CliResult {
    let report = run_verification(&opts)?;
    print!("{}", report.render());
    if report.all_pass() {
        println!("all {} properties hold", report.properties.len());
        Ok(())
    } else {
        Err(Failure {
            code: 3,
            message: format!("failed: {}", report.failed().join(", ")),
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Gen { cfg, out, truth, rep } => cmd_gen(cfg, out, truth.as_deref(), *rep),
        Command::Fit { cfg, method, rep, dump } => cmd_fit(cfg, method.as_deref(), *rep, dump.as_deref()),
        Command::Tune { cfg, rep } => cmd_tune(cfg, *rep),
        Command::Bench {
            cfg,
            out_dir,
            wall_time,
            workers,
            print_config,
            list_presets,
        } => cmd_bench(
            cfg,
            out_dir,
            BenchOptions {
                wall_time: *wall_time,
                workers: *workers,
            },
            *print_config,
            *list_presets,
        ),
        Command::Verify {
            seed,
            matrix_runs,
            corrupt_gradient,
        } => cmd_verify(VerifyOptions {
            seed: *seed,
            matrix_runs: *matrix_runs,
            corrupt_gradient: *corrupt_gradient,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
