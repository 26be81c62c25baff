//! Run-directory artifacts and plot data.
//!
//! Every CSV has a header row, LF line endings and `.` decimals. Floats are
//! written in Rust's shortest round-trip form, so infinities read `inf` and
//! values parse back bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::falsifier::{FalsifyResult, Sample};
use crate::learner::{ComponentFit, Datapoint};
use crate::orchestrator::{Counterexample, RunArtifacts};
use crate::surrogate::SurrogateModel;
use crate::synth::RestartLog;
use crate::types::{ControlInput, EnvParams, IntervalBox, Measurement, ScenarioId, SimState, Trace};

pub const RUN_REPORT: &str = "run_report.json";
pub const SURROGATE_MODEL: &str = "surrogate_model.json";
pub const COUNTEREXAMPLES: &str = "counterexamples.csv";
pub const EFFECTIVE_CONFIG: &str = "config.effective.toml";

/// Label of miss datapoints in datapoint files.
pub const MISS_LABEL: &str = "miss";

pub fn fmt_f(v: f64) -> String {
    format!("{v}")
}

fn parse_f(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Validation(format!("{what}: cannot parse `{s}` as a number")))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write a CSV file with a header row.
pub fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header and data rows of a CSV file.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Per-step trace columns after any leading id columns.
fn trace_columns(id: ScenarioId) -> Vec<String> {
    let mut h = names(&["step", "t"]);
    h.extend(names(id.sim_state_names()));
    h.extend(names(id.env_names()));
    h.extend(names(id.measurement_names()));
    h.extend(names(id.control_names()));
    h
}

/// Rows of one trace. The final state has no measurement or input, so
/// those cells are empty.
fn trace_rows(trace: &Trace, id: ScenarioId) -> Vec<Vec<String>> {
    let (ny, nu) = (id.measurement_names().len(), id.control_names().len());
    trace
        .states
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let mut row = vec![k.to_string(), fmt_f(k as f64 * trace.dt)];
            row.extend(x.values.iter().map(|v| fmt_f(*v)));
            row.extend(x.env.values.iter().map(|v| fmt_f(*v)));
            match trace.measurements.get(k) {
                Some(y) => row.extend(y.values.iter().map(|v| fmt_f(*v))),
                None => row.extend(std::iter::repeat_n(String::new(), ny)),
            }
            match trace.inputs.get(k) {
                Some(u) => row.extend(u.values.iter().map(|v| fmt_f(*v))),
                None => row.extend(std::iter::repeat_n(String::new(), nu)),
            }
            row
        })
        .collect()
}

/// One rollout, one row per step.
pub fn write_trace_csv(path: &Path, trace: &Trace, id: ScenarioId) -> Result<()> {
    write_csv(path, &trace_columns(id), trace_rows(trace, id))
}

/// All counterexample traces in long format, keyed by `trace_id`.
pub fn write_counterexamples(path: &Path, cex: &[Counterexample], id: ScenarioId) -> Result<()> {
    let mut header = names(&["trace_id", "iteration", "robustness"]);
    header.extend(trace_columns(id));
    let mut rows = Vec::new();
    for (tid, c) in cex.iter().enumerate() {
        for r in trace_rows(&c.trace, id) {
            let mut row = vec![tid.to_string(), c.iteration.to_string(), fmt_f(c.robustness)];
            row.extend(r);
            rows.push(row);
        }
    }
    write_csv(path, &header, rows)
}

/// Read traces back from a long-format counterexample file, in `trace_id`
/// order. Traces must be contiguous with consecutive steps.
pub fn read_counterexamples(path: &Path, id: ScenarioId) -> Result<Vec<Trace>> {
    let (header, rows) = read_csv(path)?;
    let cols = trace_columns(id);
    let tid_col = header
        .iter()
        .position(|h| h == "trace_id")
        .ok_or_else(|| Error::Validation(format!("{}: missing column trace_id", path.display())))?;
    let idx: Vec<usize> = cols
        .iter()
        .map(|c| {
            header.iter().position(|h| h == c).ok_or_else(|| {
                Error::Validation(format!("{}: missing column {c} for scenario {id}", path.display()))
            })
        })
        .collect::<Result<_>>()?;
    let (nx, ne, ny) = (id.sim_state_names().len(), id.env_names().len(), id.measurement_names().len());
    let mut traces: Vec<Trace> = Vec::new();
    let mut current: Option<String> = None;
    for (line, row) in rows.iter().enumerate() {
        let what = format!("{} row {}", path.display(), line + 2);
        let field = |i: usize| row.get(idx[i]).map(String::as_str).unwrap_or("");
        let num = |i: usize| parse_f(field(i), &what);
        let step: usize = field(0)
            .parse()
            .map_err(|_| Error::Validation(format!("{what}: bad step `{}`", field(0))))?;
        let t = num(1)?;
        let tid = row.get(tid_col).cloned().unwrap_or_default();
        if current.as_ref() != Some(&tid) {
            if step != 0 {
                return Err(Error::Validation(format!("{what}: trace {tid} does not start at step 0")));
            }
            traces.push(Trace { dt: 0.0, states: Vec::new(), measurements: Vec::new(), inputs: Vec::new() });
            current = Some(tid);
        }
        let tr = traces.last_mut().expect("pushed above");
        if step != tr.states.len() {
            return Err(Error::Validation(format!("{what}: expected step {}", tr.states.len())));
        }
        if step == 1 {
            tr.dt = t;
        }
        let mut at = 2;
        let take = |at: &mut usize, n: usize| -> Result<Vec<f64>> {
            let v = (*at..*at + n).map(num).collect::<Result<Vec<f64>>>();
            *at += n;
            v
        };
        let values = take(&mut at, nx)?;
        let env = take(&mut at, ne)?;
        tr.states.push(SimState { values, env: EnvParams { values: env } });
        if field(at).is_empty() {
            continue;
        }
        tr.measurements.push(Measurement { values: take(&mut at, ny)? });
        tr.inputs.push(ControlInput { values: take(&mut at, id.control_names().len())? });
    }
    for (i, tr) in traces.iter().enumerate() {
        if tr.states.len() != tr.measurements.len() + 1 {
            return Err(Error::Validation(format!(
                "{}: trace {i} must end with one state lacking measurement and input",
                path.display()
            )));
        }
    }
    Ok(traces)
}

fn datapoints_file(id: ScenarioId, output: usize) -> String {
    format!("datapoints_{}.csv", id.measurement_names()[output])
}

/// Learner datapoints of one component with their cluster labels; misses
/// carry residual `inf` and label `miss`.
pub fn write_datapoints(path: &Path, fit: &ComponentFit, id: ScenarioId) -> Result<()> {
    let mut header = names(id.model_state_names());
    header.extend(names(&["residual", "cluster", "trace_id", "step"]));
    let row = |d: &Datapoint, label: String| {
        let mut r: Vec<String> = d.x_m.iter().map(|v| fmt_f(*v)).collect();
        r.extend([fmt_f(d.e), label, d.trace_id.to_string(), d.step.to_string()]);
        r
    };
    let rows = fit
        .datapoints
        .iter()
        .enumerate()
        .map(|(i, d)| row(d, fit.labels.get(i).map(|l| l.to_string()).unwrap_or_default()))
        .chain(fit.misses.iter().map(|d| row(d, MISS_LABEL.to_string())));
    write_csv(path, &header, rows)
}

#[derive(Serialize)]
struct FalsifySummary<'a> {
    evaluations: usize,
    counterexamples: usize,
    min_robustness: f64,
    first_counterexample: Option<usize>,
    faults: usize,
    history: &'a [Sample],
}

fn history_rows(iteration: Option<usize>, history: &[Sample]) -> impl Iterator<Item = Vec<String>> + '_ {
    history.iter().enumerate().map(move |(i, s)| {
        let mut r: Vec<String> = iteration.map(|it| it.to_string()).into_iter().collect();
        r.push((i + 1).to_string());
        r.extend(s.point.iter().map(|v| fmt_f(*v)));
        r.push(fmt_f(s.robustness));
        r
    })
}

fn search_names(id: ScenarioId) -> Vec<String> {
    let mut n: Vec<String> = match id {
        ScenarioId::LaneKeeping => names(&["d0", "theta0", "v0"]),
        ScenarioId::Braking => names(&["d0", "v0", "d_car0"]),
    };
    n.extend(names(id.env_names()));
    n
}

/// Standalone falsification output: `falsify_result.json`,
/// `falsify_history.csv` and the counterexample traces.
pub fn write_falsify_result(dir: &Path, res: &FalsifyResult, id: ScenarioId, iteration: usize) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    // JSON has no infinity: an infinite min_robustness is written as null.
    let summary = FalsifySummary {
        evaluations: res.evaluations,
        counterexamples: res.counterexamples.len(),
        min_robustness: res.min_robustness,
        first_counterexample: res.first_counterexample(),
        faults: res.faults,
        history: &res.history,
    };
    write_text(&dir.join("falsify_result.json"), &serde_json::to_string_pretty(&summary)?)?;
    let mut header = names(&["evaluation"]);
    header.extend(search_names(id));
    header.push("robustness".into());
    write_csv(&dir.join("falsify_history.csv"), &header, history_rows(None, &res.history))?;
    let cex: Vec<Counterexample> = res
        .counterexamples
        .iter()
        .zip(&res.counterexample_points)
        .zip(res.history.iter().filter(|s| s.robustness < 0.0))
        .map(|((trace, point), s)| Counterexample {
            iteration,
            point: point.clone(),
            robustness: s.robustness,
            trace: trace.clone(),
        })
        .collect();
    write_counterexamples(&dir.join(COUNTEREXAMPLES), &cex, id)
}

fn synth_log_rows(logs: &[Vec<RestartLog>], iterations: &[usize]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (log, it) in logs.iter().zip(iterations) {
        for r in log {
            for (step, (p, j)) in r.path.iter().enumerate() {
                let mut row = vec![it.to_string(), r.restart.to_string(), step.to_string()];
                row.extend(p.iter().map(|v| fmt_f(*v)));
                row.push(fmt_f(*j));
                row.push(r.bank_growth.get(step).map(|b| b.to_string()).unwrap_or_default());
                row.push(r.outcome.clone());
                rows.push(row);
            }
        }
    }
    rows
}

/// Write every artifact of a finished run into `dir`.
pub fn write_run_dir(dir: &Path, cfg: &RunConfig, art: &RunArtifacts) -> Result<()> {
    let id = cfg.scenario;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join(EFFECTIVE_CONFIG), &cfg.to_toml()?)?;
    write_text(&dir.join(RUN_REPORT), &serde_json::to_string_pretty(&art.report)?)?;
    write_text(&dir.join(SURROGATE_MODEL), &art.report.final_model.to_json()?)?;
    write_counterexamples(&dir.join(COUNTEREXAMPLES), &art.counterexamples, id)?;

    let mut header = names(&["trace_id", "iteration", "robustness"]);
    header.extend(search_names(id));
    let rows = art.counterexamples.iter().enumerate().map(|(i, c)| {
        let mut r = vec![i.to_string(), c.iteration.to_string(), fmt_f(c.robustness)];
        r.extend(c.point.iter().map(|v| fmt_f(*v)));
        r
    });
    write_csv(&dir.join("counterexample_points.csv"), &header, rows)?;

    if cfg.export.datapoints {
        for fit in &art.fits {
            write_datapoints(&dir.join(datapoints_file(id, fit.output)), fit, id)?;
        }
    }
    if cfg.export.plot_data {
        let mut header = names(&["iteration", "synth_success"]);
        header.extend(names(id.param_names()));
        header.extend(names(&[
            "synth_objective",
            "synth_evaluations",
            "bank_size",
            "falsify_evaluations",
            "counterexamples",
            "xi_total",
            "min_robustness",
            "clusters",
        ]));
        let rows = art.report.iterations.iter().map(|r| {
            let mut row = vec![r.iteration.to_string(), r.synth_success.to_string()];
            row.extend(r.synthesized_p.iter().map(|v| fmt_f(*v)));
            row.extend([
                fmt_f(r.synth_objective),
                r.synth_evaluations.to_string(),
                r.bank_size.to_string(),
                r.falsify_evaluations.to_string(),
                r.counterexamples.to_string(),
                r.xi_total.to_string(),
                fmt_f(r.min_robustness),
                r.clusters_per_component.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";"),
            ]);
            row
        });
        write_csv(&dir.join("iterations.csv"), &header, rows)?;

        // Histories exist for iterations whose synthesis succeeded.
        let falsified: Vec<usize> =
            art.report.iterations.iter().filter(|r| r.synth_success).map(|r| r.iteration).collect();
        let mut header = names(&["iteration", "evaluation"]);
        header.extend(search_names(id));
        header.push("robustness".into());
        let rows: Vec<Vec<String>> = art
            .falsify_histories
            .iter()
            .zip(&falsified)
            .flat_map(|(h, it)| history_rows(Some(*it), h).collect::<Vec<_>>())
            .collect();
        write_csv(&dir.join("falsify_history.csv"), &header, rows)?;

        let all: Vec<usize> = art.report.iterations.iter().map(|r| r.iteration).collect();
        let mut header = names(&["iteration", "restart", "step"]);
        header.extend(names(id.param_names()));
        header.extend(names(&["objective", "bank_size", "restart_outcome"]));
        write_csv(&dir.join("synth_log.csv"), &header, synth_log_rows(&art.synth_logs, &all))?;
    }
    Ok(())
}

/// Files written by [`export_plots`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlotFiles {
    pub scatter: PathBuf,
    pub bands: PathBuf,
}

/// Domain of a component's bands: the model's initial box, every cluster
/// domain and the miss region, projected on the component's dims.
fn band_domain(model: &SurrogateModel, ci: usize) -> IntervalBox {
    let comp = &model.error[ci];
    let mut boxes = vec![model.x0_box.select(&comp.dims)];
    boxes.extend(comp.clusters.iter().map(|c| c.domain.clone()));
    boxes.extend(comp.miss_region.clone());
    let corners: Vec<Vec<f64>> = boxes.iter().flat_map(|b| [b.lo.clone(), b.hi.clone()]).collect();
    IntervalBox::bounding(corners.iter().map(Vec::as_slice))
}

/// Grid of `n` points per dim over `b`, last dim fastest.
fn grid(b: &IntervalBox, n: usize) -> Vec<Vec<f64>> {
    let axis = |i: usize| -> Vec<f64> {
        if n == 1 {
            return vec![0.5 * (b.lo[i] + b.hi[i])];
        }
        (0..n).map(|k| b.lo[i] + b.width(i) * k as f64 / (n - 1) as f64).collect()
    };
    let mut pts = vec![Vec::new()];
    for i in 0..b.dim() {
        let ax = axis(i);
        pts = pts
            .into_iter()
            .flat_map(|p| {
                ax.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    pts
}

/// Emit `clusters_scatter.csv` and `model_bands.csv` for a run directory.
///
/// Bands report the hull of the output set at each grid point. Model
/// dims outside a component's domain are held at the centre of the model's
/// initial box.
pub fn export_plots(run_dir: &Path, n_grid: usize) -> Result<PlotFiles> {
    let model_path = run_dir.join(SURROGATE_MODEL);
    let text = fs::read_to_string(&model_path).map_err(|e| Error::io(&model_path, e))?;
    let model = SurrogateModel::from_json(&text)?;
    let id = model.scenario;
    let mx = id.model_state_names().len();

    let mut header = names(&["component"]);
    header.extend(names(id.model_state_names()));
    header.extend(names(&["residual", "cluster"]));
    let mut rows = Vec::new();
    for comp in &model.error {
        let name = id.measurement_names()[comp.output];
        let path = run_dir.join(datapoints_file(id, comp.output));
        if !path.exists() {
            if comp.clusters.is_empty() {
                continue;
            }
            return Err(Error::io(&path, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        let (_, data) = read_csv(&path)?;
        for r in data {
            if r.len() < mx + 2 || r[mx + 1] == MISS_LABEL {
                continue;
            }
            let mut row = vec![name.to_string()];
            row.extend(r[..mx + 2].iter().cloned());
            rows.push(row);
        }
    }
    let scatter = run_dir.join("clusters_scatter.csv");
    write_csv(&scatter, &header, rows)?;

    // Grid columns are named after the dims when all components share them.
    let max_dims = model.error.iter().map(|c| c.dims.len()).max().unwrap_or(0);
    let shared = model.error.windows(2).all(|w| w[0].dims == w[1].dims);
    let mut header = names(&["component"]);
    match model.error.first() {
        Some(c) if shared => header.extend(c.dims.iter().map(|&d| id.model_state_names()[d].to_string())),
        _ => header.extend((0..max_dims).map(|i| format!("z{i}"))),
    }
    header.extend(names(&["h_star", "low", "up", "miss"]));
    let centre = model.x0_box.center();
    let mut rows = Vec::new();
    for (ci, comp) in model.error.iter().enumerate() {
        let name = id.measurement_names()[comp.output];
        for z in grid(&band_domain(&model, ci), n_grid) {
            let mut x = centre.clone();
            for (k, &d) in comp.dims.iter().enumerate() {
                x[d] = z[k];
            }
            let h = model.nominal(&x)[comp.output];
            let set = comp.residual_set(&x);
            let lo = set.intervals.iter().map(|i| i.0).fold(f64::INFINITY, f64::min);
            let hi = set.intervals.iter().map(|i| i.1).fold(f64::NEG_INFINITY, f64::max);
            let mut row = vec![name.to_string()];
            row.extend(z.iter().map(|v| fmt_f(*v)));
            row.extend(std::iter::repeat_n(String::new(), max_dims - z.len()));
            row.extend([fmt_f(h), fmt_f(h + lo), fmt_f(h + hi), u8::from(set.may_miss).to_string()]);
            rows.push(row);
        }
    }
    let bands = run_dir.join("model_bands.csv");
    write_csv(&bands, &header, rows)?;
    Ok(PlotFiles { scatter, bands })
}
