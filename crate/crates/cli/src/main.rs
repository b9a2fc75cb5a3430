use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use splinehmm::conditional::{run_pipeline, write_sub_probs};
use splinehmm::hmm::{smoothed_probs, viterbi, Dataset};
use splinehmm::io::{read_series, write_decoding, write_series};
use splinehmm::postproc::{kld, linspace, relabel, summarize};
use splinehmm::sampler::{run_chain, MoveKind};
use splinehmm::selection::{run_parallel, SelectionResult};
use splinehmm::simgen::{
    model2_params, simulate_activity, simulate_model1, simulate_model3, simulate_spline_hmm,
    simulate_zero_inflated, zero_inflated_params, ActivityDesign,
};
use splinehmm::{Error, GroundTruth, RunConfig, Summary, Trace};

/// Bayesian HMMs with free-knot spline emission densities.
#[derive(Debug, Parser)]
#[command(name = "splinehmm", version)]
struct Cli {
    /// Master seed; every run is reproducible from inputs, config and seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Maximum number of concurrent chains (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Directory for all output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Override one configuration key, e.g. `--set k_max=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Model1,
    Model2,
    Model3,
    Spline,
    ZeroInflated,
    Activity,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a series from a preset; writes data.csv and truth.json.
    Simulate {
        preset: Preset,
        #[arg(long, default_value_t = 800)]
        n: usize,
        /// Switching probability of the model3 preset.
        #[arg(long, default_value_t = 0.05)]
        rho: f64,
        /// Fitted summary whose posterior-mean parameters drive the spline preset.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Number of days for the activity preset.
        #[arg(long, default_value_t = 8)]
        days: usize,
    },
    /// Fit one model; writes trace.jsonl, trace.csv, summary.json and density.csv.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 2)]
        states: usize,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Fit every candidate state count and compare them.
    Select {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated state counts; defaults to the configured list.
        #[arg(long, value_delimiter = ',')]
        candidates: Option<Vec<usize>>,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Viterbi path and smoothed probabilities under a fitted summary.
    Decode {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Summarize a trace; optionally report KLD against a truth sidecar.
    Summarize {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Main fit, bout extraction and conditional sub fit.
    Subfit {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
}

/// A failure with the category that selects the exit code.
#[derive(Debug)]
struct Failure {
    category: &'static str,
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (category, code) = match &e {
            Error::Parse { .. } | Error::InvalidData(_) | Error::EmptyConditioning => ("input", 3),
            Error::Config(_) => ("config", 4),
            Error::Io(_) => ("io", 5),
            _ => ("model", 6),
        };
        Failure {
            category,
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

type CliResult<T> = std::result::Result<T, Failure>;

fn with_path<T>(path: &Path, r: splinehmm::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

fn open(path: &Path) -> CliResult<File> {
    with_path(path, File::open(path).map_err(Error::from))
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn load_values(path: &Path) -> CliResult<Vec<Option<f64>>> {
    let series = with_path(path, read_series(open(path)?))?;
    if series.is_empty() {
        return Err(Error::InvalidData(format!("{}: no observations", path.display())).into());
    }
    Ok(series.values)
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn apply_schedule(cfg: &mut RunConfig, s: &ScheduleArgs) -> CliResult<()> {
    for (key, v) in [("burn_in", s.burn_in), ("iters", s.iters), ("thin", s.thin)] {
        if let Some(v) = v {
            cfg.set(key, &v.to_string())?;
        }
    }
    cfg.validate()?;
    Ok(())
}

fn write_summary(dir: &Path, prefix: &str, summary: &Summary) -> CliResult<()> {
    summary.write_json(create(dir, &format!("{prefix}summary.json"))?)?;
    summary.write_density_csv(create(dir, &format!("{prefix}density.csv"))?)?;
    Ok(())
}

fn report_rates(trace: &Trace) {
    let rates: Vec<String> = MoveKind::ALL
        .iter()
        .filter_map(|&k| trace.acceptance_rate(k).filter(|r| r.is_finite()).map(|r| format!("{k:?} {r:.3}")))
        .collect();
    if !rates.is_empty() {
        println!("acceptance: {}", rates.join(", "));
    }
}

fn simulate(cli: &Cli, preset: Preset, n: usize, rho: f64, from: Option<&Path>, days: usize) -> CliResult<()> {
    let dir = &cli.out_dir;
    if let Preset::Activity = preset {
        let design = ActivityDesign {
            days,
            ..ActivityDesign::default()
        };
        let sub = zero_inflated_params([0.9, 0.25], [0.96, 0.89]);
        let truth = simulate_activity(&sub, &design, cli.seed)?;
        let values: Vec<Option<f64>> = truth.obs.iter().map(|&y| Some(y)).collect();
        write_series(create(dir, "data.csv")?, &values)?;
        truth.write_json(create(dir, "truth.json")?)?;
        println!("wrote {} observations over {} nights", values.len(), truth.nights.len());
        return Ok(());
    }
    let truth = match preset {
        Preset::Model1 => simulate_model1(n, cli.seed)?,
        Preset::Model2 => simulate_spline_hmm(&model2_params(), n, cli.seed)?,
        Preset::Model3 => simulate_model3(n, rho, cli.seed)?,
        Preset::ZeroInflated => {
            simulate_zero_inflated(&zero_inflated_params([0.9, 0.25], [0.96, 0.89]), n, cli.seed)?
        }
        Preset::Spline => {
            let path = from.ok_or_else(|| Error::Config("the spline preset needs --from <summary.json>".into()))?;
            let summary = with_path(path, Summary::read_json(open(path)?))?;
            simulate_spline_hmm(&summary.point_estimate()?, n, cli.seed)?
        }
        Preset::Activity => unreachable!(),
    };
    let values: Vec<Option<f64>> = truth.obs.iter().map(|&y| Some(y)).collect();
    write_series(create(dir, "data.csv")?, &values)?;
    truth.write_json(create(dir, "truth.json")?)?;
    println!("wrote {} observations", values.len());
    Ok(())
}

fn fit(cli: &Cli, data_path: &Path, states: usize, schedule: &ScheduleArgs) -> CliResult<()> {
    let mut cfg = load_config(cli)?;
    apply_schedule(&mut cfg, schedule)?;
    let values = load_values(data_path)?;
    let (a, b) = cfg.bounds_for(&values)?;
    let data = Dataset::from_options(&values, a, b)?;
    let trace = relabel(&run_chain(&data, states, &cfg.chain_config(a, b), cli.seed)?);
    let dir = &cli.out_dir;
    trace.write_jsonl(create(dir, "trace.jsonl")?)?;
    trace.write_csv(create(dir, "trace.csv")?)?;
    let summary = summarize(&trace, &linspace(a, b, cfg.grid_points))?;
    write_summary(dir, "", &summary)?;
    println!(
        "N={states}: {} draws, modal K {} (posterior probability {:.3}), support [{a}, {b}]",
        trace.len(),
        summary.modal_k,
        summary.modal_k_prob
    );
    report_rates(&trace);
    Ok(())
}

fn select(cli: &Cli, data_path: &Path, candidates: Option<&[usize]>, schedule: &ScheduleArgs) -> CliResult<()> {
    let mut cfg = load_config(cli)?;
    apply_schedule(&mut cfg, schedule)?;
    let candidates = candidates.map_or_else(|| cfg.candidates.clone(), <[usize]>::to_vec);
    let values = load_values(data_path)?;
    let (a, b) = cfg.bounds_for(&values)?;
    let data = Dataset::from_options(&values, a, b)?;
    let traces = run_parallel(&data, &candidates, &cfg.chain_config(a, b), cli.seed, cli.threads)?;
    let mut result = SelectionResult::from_traces(&candidates, &traces, None)?;
    let dir = &cli.out_dir;
    for (j, (n, trace)) in candidates.iter().zip(&traces).enumerate() {
        let name = format!("trace_n{n}.jsonl");
        relabel(trace).write_jsonl(create(dir, &name)?)?;
        result.trace_files[j] = Some(name);
    }
    result.write_json(create(dir, "selection.json")?)?;
    print!("{}", result.table());
    Ok(())
}

fn decode(cli: &Cli, summary_path: &Path, data_path: &Path) -> CliResult<()> {
    let summary = with_path(summary_path, Summary::read_json(open(summary_path)?))?;
    let params = summary.point_estimate()?;
    let values = load_values(data_path)?;
    let (a, b) = summary.bounds;
    if let Some(y) = values.iter().flatten().find(|&&y| y < a || y > b) {
        return Err(Error::InvalidData(format!(
            "observation {y} lies outside the fitted support [{a}, {b}]"
        ))
        .into());
    }
    let data = Dataset::from_options(&values, a, b)?;
    let path = viterbi(&params, &data)?;
    let probs = smoothed_probs(&params, &data)?;
    write_decoding(create(&cli.out_dir, "decoding.csv")?, &path, &probs)?;
    let mut occupancy = vec![0usize; params.n_states()];
    for &s in &path {
        occupancy[s] += 1;
    }
    println!("decoded {} points; time in each state: {occupancy:?}", path.len());
    Ok(())
}

fn read_trace(path: &Path) -> CliResult<Trace> {
    let reader = BufReader::new(open(path)?);
    let trace = if path.extension().is_some_and(|e| e == "csv") {
        Trace::read_csv(reader)
    } else {
        Trace::read_jsonl(reader)
    };
    with_path(path, trace)
}

fn summarize_cmd(cli: &Cli, trace_path: &Path, truth_path: Option<&Path>) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let trace = relabel(&read_trace(trace_path)?);
    let first = trace.draws.first().ok_or(Error::EmptyTrace)?;
    let (a, b) = (first.params.knots.a(), first.params.knots.b());
    let grid = linspace(a, b, cfg.grid_points);
    let summary = summarize(&trace, &grid)?;
    write_summary(&cli.out_dir, "", &summary)?;
    println!(
        "N={}: {} draws, modal K {} (posterior probability {:.3})",
        summary.n_states, summary.n_draws, summary.modal_k, summary.modal_k_prob
    );
    if let Some(path) = truth_path {
        let truth = with_path(path, GroundTruth::read_json(open(path)?))?;
        if truth.params.n_states() != summary.n_states {
            return Err(Error::InvalidData(format!(
                "truth has {} states, the trace has {}",
                truth.params.n_states(),
                summary.n_states
            ))
            .into());
        }
        let mut out = create(&cli.out_dir, "kld.csv")?;
        writeln!(out, "state,kld")?;
        for i in 0..summary.n_states {
            let p: Vec<f64> = grid.iter().map(|&y| truth.params.density(i, y)).collect();
            let d = kld(&grid, &p, &summary.density_mean[i])?;
            writeln!(out, "{i},{d}")?;
            println!("state {i}: KLD to truth {d:.5}");
        }
    }
    Ok(())
}

fn subfit(cli: &Cli, data_path: &Path, schedule: &ScheduleArgs) -> CliResult<()> {
    let mut cfg = load_config(cli)?;
    apply_schedule(&mut cfg, schedule)?;
    let values = load_values(data_path)?;
    let res = run_pipeline(&values, &cfg.pipeline, |a, b| cfg.chain_config(a, b), cli.seed, cli.threads)?;
    let dir = &cli.out_dir;
    res.bouts.write_csv(create(dir, "bouts.csv")?)?;
    write_sub_probs(create(dir, "sub_probs.csv")?, &res.sub.data, &res.sub.state_probs()?)?;
    write_summary(dir, "main_", &res.main.summary)?;
    write_summary(dir, "sub_", &res.sub.summary)?;
    if let Some(sel) = &res.main.selection {
        sel.write_json(create(dir, "main_selection.json")?)?;
    }
    let w: Vec<String> = res
        .sub
        .summary
        .zero_weights
        .iter()
        .flatten()
        .map(|x| format!("{:.3}", x.mean))
        .collect();
    println!(
        "{} bouts; sub-model over {} conditioning path(s), zero weights [{}]",
        res.bouts.bouts.len(),
        res.sub.n_paths,
        w.join(", ")
    );
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    fs::create_dir_all(&cli.out_dir)?;
    match &cli.command {
        Command::Simulate {
            preset,
            n,
            rho,
            from,
            days,
        } => simulate(cli, *preset, *n, *rho, from.as_deref(), *days),
        Command::Fit {
            data,
            states,
            schedule,
        } => fit(cli, data, *states, schedule),
        Command::Select {
            data,
            candidates,
            schedule,
        } => select(cli, data, candidates.as_deref(), schedule),
        Command::Decode { summary, data } => decode(cli, summary, data),
        Command::Summarize { trace, truth } => summarize_cmd(cli, trace, truth.as_deref()),
        Command::Subfit { data, schedule } => subfit(cli, data, schedule),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error [{}]: {}", f.category, f.message);
            ExitCode::from(f.code)
        }
    }
}
