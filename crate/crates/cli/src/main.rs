//! `cegsyn` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cegsyn::config::RunConfig;
use cegsyn::error::{Error, Result};
use cegsyn::export;
use cegsyn::falsifier::{falsify, FalsifyConfig, Problem};
use cegsyn::learner::build_error_model;
use cegsyn::orchestrator::{run_loop, LoopInputs, Outcome};
use cegsyn::sim::simulate;
use cegsyn::surrogate::SurrogateModel;

/// Run finished with a non-success outcome of the loop.
const EXIT_NO_CONTROLLER: u8 = 2;
const EXIT_BUDGET: u8 = 3;
/// The falsifier found counterexamples.
const EXIT_FALSIFIED: u8 = 4;

#[derive(Parser)]
#[command(name = "cegsyn", version, about = "Counterexample-guided synthesis of perception models and controllers")]
struct Cli {
    /// Worker threads for parallel stages (0 = all cores).
    #[arg(long, global = true, env = "CEGSYN_THREADS", default_value_t = 0)]
    threads: usize,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full synthesis loop and write a run directory.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Falsify fixed controller parameters on the simulator.
    Falsify {
        config: PathBuf,
        /// Controller parameters, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        params: Vec<f64>,
        /// Defaults to the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to the config's falsification budget.
        #[arg(long)]
        budget: Option<usize>,
        /// Defaults to `<output_dir>/falsify`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build an error model from a counterexample CSV.
    LearnModel {
        config: PathBuf,
        #[arg(long)]
        counterexamples: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Simulate one closed-loop rollout to CSV.
    Simulate {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        params: Vec<f64>,
        /// Search point: initial conditions then environment. Defaults to
        /// the centre of the search box.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Emit scatter and band plot data for a run directory.
    ExportPlots {
        run_dir: PathBuf,
        /// Grid points per model dimension in the bands file.
        #[arg(long, default_value_t = 41)]
        grid: usize,
    },
}

fn check_params(cfg: &RunConfig, p: &[f64]) -> Result<()> {
    let n = cfg.scenario.param_names().len();
    if p.len() != n {
        return Err(Error::Config(format!("--params needs {n} values for {}", cfg.scenario)));
    }
    Ok(())
}

fn cmd_run(config: &Path, output: Option<PathBuf>) -> Result<u8> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(o) = output {
        cfg.output_dir = o;
    }
    let dir = cfg.output_dir.clone();
    // Fail on an unusable output directory before spending any compute.
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    export::write_text(&dir.join(export::EFFECTIVE_CONFIG), &cfg.to_toml()?)?;
    let scenario = cfg.scenario_instance();
    let (phi_s, phi_m) = cfg.specs()?;
    let inputs = LoopInputs { scenario: &scenario, emulator: &cfg.emulator, phi_s: &phi_s, phi_m: &phi_m };
    let art = run_loop(&inputs, &cfg.loop_cfg)?;
    export::write_run_dir(&dir, &cfg, &art)?;
    let r = &art.report;
    println!(
        "outcome {} after {} iterations, {} simulations, final p = {:?}",
        r.outcome.as_str(),
        r.iterations.len(),
        r.total_simulations,
        r.final_p
    );
    println!("artifacts in {}", dir.display());
    Ok(match r.outcome {
        Outcome::Success => 0,
        Outcome::SynthFailure | Outcome::ModelStagnation => EXIT_NO_CONTROLLER,
        Outcome::BudgetExhausted => EXIT_BUDGET,
        Outcome::Fault => {
            eprintln!("error: {}", r.error.as_deref().unwrap_or("a stage failed"));
            1
        }
    })
}

fn cmd_falsify(
    config: &Path,
    params: &[f64],
    seed: Option<u64>,
    budget: Option<usize>,
    output: Option<PathBuf>,
) -> Result<u8> {
    let cfg = RunConfig::load(config)?;
    check_params(&cfg, params)?;
    let scenario = cfg.scenario_instance();
    let (phi_s, _) = cfg.specs()?;
    let fcfg = FalsifyConfig { budget: budget.unwrap_or(cfg.loop_cfg.falsify.budget), ..cfg.loop_cfg.falsify.clone() };
    let problem = Problem { scenario: &scenario, emulator: &cfg.emulator, params, spec: &phi_s };
    let res = falsify(&problem, &fcfg, seed.unwrap_or(cfg.loop_cfg.master_seed))?;
    let dir = output.unwrap_or_else(|| cfg.output_dir.join("falsify"));
    export::write_falsify_result(&dir, &res, cfg.scenario, 0)?;
    println!(
        "{} counterexamples in {} simulations (min robustness {})",
        res.counterexamples.len(),
        res.evaluations,
        res.min_robustness
    );
    Ok(if res.counterexamples.is_empty() { 0 } else { EXIT_FALSIFIED })
}

fn cmd_learn_model(config: &Path, cex: &Path, output: &Path, seed: u64) -> Result<u8> {
    let cfg = RunConfig::load(config)?;
    let traces = export::read_counterexamples(cex, cfg.scenario)?;
    let expert = SurrogateModel::zero_error(&cfg.scenario_instance());
    let learn = cegsyn::learner::LearnConfig { seed, ..cfg.loop_cfg.learn.clone() };
    let (model, fits) = build_error_model(&traces, &expert, &learn)?;
    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    export::write_text(&output.join(export::SURROGATE_MODEL), &model.to_json()?)?;
    for fit in &fits {
        let name = cfg.scenario.measurement_names()[fit.output];
        export::write_datapoints(&output.join(format!("datapoints_{name}.csv")), fit, cfg.scenario)?;
        println!("{name}: {} clusters from {} datapoints, {} misses", fit.k, fit.datapoints.len(), fit.misses.len());
    }
    Ok(0)
}

fn cmd_simulate(config: &Path, params: &[f64], x0: Option<Vec<f64>>, output: &Path) -> Result<u8> {
    let cfg = RunConfig::load(config)?;
    check_params(&cfg, params)?;
    let scenario = cfg.scenario_instance();
    let bbox = scenario.search_box();
    let point = x0.unwrap_or_else(|| bbox.center());
    if point.len() != bbox.dim() {
        return Err(Error::Config(format!(
            "--x0 needs {} values ({})",
            bbox.dim(),
            scenario.search_names().join(", ")
        )));
    }
    let trace = simulate(&scenario, &cfg.emulator, params, scenario.initial_state(&point))?;
    export::write_trace_csv(output, &trace, cfg.scenario)?;
    let (phi_s, _) = cfg.specs()?;
    println!("robustness {}", phi_s.robustness(&trace, 0)?);
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Run { config, output } => cmd_run(&config, output),
        Command::Falsify { config, params, seed, budget, output } => {
            cmd_falsify(&config, &params, seed, budget, output)
        }
        Command::LearnModel { config, counterexamples, output, seed } => {
            cmd_learn_model(&config, &counterexamples, &output, seed)
        }
        Command::Simulate { config, params, x0, output } => cmd_simulate(&config, &params, x0, &output),
        Command::ExportPlots { run_dir, grid } => export::export_plots(&run_dir, grid.max(1)).map(|f| {
            println!("wrote {} and {}", f.scatter.display(), f.bands.display());
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
