use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use slowfast_core::numerics::UniformGrid;
use slowfast_core::quasipotential::{
    find_attractors, hj_root_quasipotential, igraph_weights, log_speed_grid, predict_exit_time, transition_matrix,
    AttractorSet, BarrierMethod, DpGraph, HjRoot, TransitionStructure,
};
use slowfast_core::rate::{averaged_drift, CumulantModel, ExactCumulant, Extended, RateSurface, TableConfig};
use slowfast_core::resonance::{empirical_period, run_three_scale, BarrierTable, ThreeScaleSpec};
use slowfast_core::simulate::{
    averaging_error_stat, exit_scaling_fit, exit_times, run_occupation_histogram, transition_sequence, AveragingConfig,
    Histogram,
};
use slowfast_core::{Error as CoreError, RngStream, SlowBox, SlowVec, SystemSpec};

use crate::config::{
    serialize_config, AveragingParams, BuiltSystem, ChainParams, Command, ExitParams, HistogramParams, QpMethod,
    QpParams, RateParams, ResonanceParams, RunConfig,
};
use crate::error::{CliError, ConfigError};
use crate::output::{emit_svg, histogram_csv, real, write_file, Csv, PlotData};

/// Files written by a run and the headline numbers echoed in `summary.txt`.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub headline: Vec<(String, String)>,
}

impl Report {
    fn put(&mut self, key: &str, value: impl ToString) {
        self.headline.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.headline.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn two_scale(cfg: &RunConfig) -> Result<SystemSpec, CliError> {
    match cfg.system.build()? {
        BuiltSystem::TwoScale(s) => Ok(s),
        BuiltSystem::ThreeScale(_) => Err(ConfigError::Invalid(format!(
            "{} needs a two-scale system; three-scale systems run the resonance command",
            cfg.command.name()
        ))
        .into()),
    }
}

fn count(n: u64) -> usize {
    usize::try_from(n).unwrap_or(usize::MAX)
}

/// Runs the configured command, writing its CSVs and `summary.txt` into the
/// output directory.
pub fn run_command(cfg: &RunConfig) -> Result<Report, CliError> {
    let started = Instant::now();
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut report = Report::default();
    match &cfg.command {
        Command::SimHistogram(p) => sim_histogram(cfg, p, &mut report)?,
        Command::AveragingCheck(p) => averaging_check(cfg, p, &mut report)?,
        Command::ExitTimes(p) => exit_times_cmd(cfg, p, &mut report)?,
        Command::RateTables(p) => rate_tables(cfg, p, &mut report)?,
        Command::Quasipotential(p) => quasipotential(cfg, p, &mut report)?,
        Command::PredictOccupation(p) => predict_occupation(cfg, p, &mut report)?,
        Command::BoundaryChain(p) => boundary_chain(cfg, p, &mut report)?,
        Command::Resonance(p) => resonance(cfg, p, &mut report)?,
    }
    let mut text = String::from("# config\n");
    text.push_str(&serialize_config(cfg));
    text.push_str("\n# results\n");
    text.push_str(&format!("wall_time_s = {:.3}\n", started.elapsed().as_secs_f64()));
    for (k, v) in &report.headline {
        text.push_str(&format!("{k} = {v}\n"));
    }
    report.files.push(write_file(&dir, "summary.txt", &text)?);
    Ok(report)
}

fn attractors_of(model: &dyn CumulantModel, system: &SystemSpec) -> Result<AttractorSet, CliError> {
    Ok(find_attractors(|x| model.bbar(x), &system.slow_domain, 400)?)
}

fn join(xs: impl IntoIterator<Item = f64>) -> String {
    xs.into_iter().map(real).collect::<Vec<_>>().join(" ")
}

fn sim_histogram(cfg: &RunConfig, p: &HistogramParams, report: &mut Report) -> Result<(), CliError> {
    let system = two_scale(cfg)?;
    system.require_scalar()?;
    let (lo, hi) = p
        .range
        .unwrap_or((system.slow_domain.lo.x(), system.slow_domain.hi.x()));
    let mut rng = RngStream::new(cfg.seed, 0);
    let hist = run_occupation_histogram(
        &system,
        p.x0,
        p.y0.policy(&system.driver),
        p.steps,
        Histogram::new(lo, hi, count(p.bins))?,
        &mut rng,
    )?;
    report
        .files
        .push(histogram_csv(&hist).write(&cfg.output_dir, "histogram.csv")?);
    report.put("samples", hist.total);
    report.put("out_of_range", hist.out_of_range);
    let model = ExactCumulant::new(&system, 256)?;
    let set = attractors_of(&model, &system)?;
    let centers: Vec<f64> = set.attractors.iter().map(|a| a.x()).collect();
    report.put("attractors", join(centers.iter().copied()));
    report.put(
        &format!("mass_within_{}", p.radius),
        real(hist.mass_near(&centers, p.radius)),
    );
    for c in &centers {
        report.put(&format!("mass_near_{c:.3}"), real(hist.mass_near(&[*c], p.radius)));
    }
    if cfg.emit_svg {
        let svg = emit_svg(&PlotData::Histogram(&hist), &format!("{} histogram", system.name))?;
        report.files.push(write_file(&cfg.output_dir, "histogram.svg", &svg)?);
    }
    Ok(())
}

fn averaging_check(cfg: &RunConfig, p: &AveragingParams, report: &mut Report) -> Result<(), CliError> {
    let system = two_scale(cfg)?;
    let n_y = count(p.n_y);
    let x0 = SlowVec::from_slice(&vec![p.x0; system.dim()])?;
    let stats = averaging_error_stat(
        &system,
        |z| averaged_drift(&system, z, n_y),
        x0,
        p.t_end,
        &AveragingConfig {
            n_replicas: count(p.replicas),
            y0: p.y0.policy(&system.driver),
            threshold: p.threshold,
            reference: p.reference,
            seed: cfg.seed,
            group: 0,
        },
    )?;
    let mut csv = Csv::new("replica,deviation");
    for (r, d) in stats.deviations.iter().enumerate() {
        csv.row(&[r.to_string(), real(*d)]);
    }
    report.files.push(csv.write(&cfg.output_dir, "averaging.csv")?);
    report.put("steps_per_replica", (p.t_end / system.epsilon).round());
    report.put("q50", real(stats.q50));
    report.put("q90", real(stats.q90));
    report.put("q99", real(stats.q99));
    report.put("exceedance", real(stats.exceedance));
    Ok(())
}

fn exit_times_cmd(cfg: &RunConfig, p: &ExitParams, report: &mut Report) -> Result<(), CliError> {
    let system = two_scale(cfg)?;
    system.require_scalar()?;
    let v = SlowBox::interval(p.v_lo, p.v_hi);
    let mut csv = Csv::new("epsilon,replica,tau_slow,censored,exit_x");
    let mut all = Vec::new();
    for (g, &eps) in p.epsilons.iter().enumerate() {
        let cap = match (p.cap, p.r_hat) {
            (Some(c), _) => c,
            (None, Some(r)) => 10.0 * (r / eps).exp(),
            (None, None) => unreachable!("validated by the config parser"),
        };
        let samples = exit_times(
            &system.with_epsilon(eps),
            SlowVec::scalar(p.x0),
            p.y0.policy(&system.driver),
            &v,
            cap,
            count(p.replicas),
            cfg.seed,
            g as u64,
        );
        for s in &samples {
            csv.row(&[
                real(s.epsilon),
                s.replica.to_string(),
                real(s.tau_slow),
                u8::from(s.censored).to_string(),
                real(s.exit_point.x()),
            ]);
        }
        all.extend(samples);
    }
    report.files.push(csv.write(&cfg.output_dir, "exits.csv")?);
    match exit_scaling_fit(&all) {
        Ok(fit) => {
            report.put("slope", real(fit.slope));
            report.put("intercept", real(fit.intercept));
            report.put("r_squared", real(fit.r_squared));
            report.put("means_disagree", fit.means_disagree);
            for g in &fit.groups {
                report.put(
                    &format!("group_{}", real(g.epsilon)),
                    format!(
                        "n={} censored={} mean_excluded={} mean_imputed={}",
                        g.n,
                        g.censored,
                        real(g.mean_excluded),
                        real(g.mean_imputed)
                    ),
                );
            }
        }
        Err(e) => report.put("fit", format!("unavailable: {e}")),
    }
    Ok(())
}

fn table_config(n_y: u64) -> TableConfig {
    TableConfig {
        n_y: count(n_y),
        ..TableConfig::default()
    }
}

fn rate_tables(cfg: &RunConfig, p: &RateParams, report: &mut Report) -> Result<(), CliError> {
    let system = two_scale(cfg)?;
    system.require_scalar()?;
    let (lo, hi) = p
        .x_range
        .unwrap_or((system.slow_domain.lo.x(), system.slow_domain.hi.x()));
    let tcfg = TableConfig {
        n_y: count(p.n_y),
        beta_nodes: count(p.beta_nodes),
        b_max: p.b_max,
        alpha_nodes: count(p.alpha_nodes),
    };
    let surface = RateSurface::build(&system, lo, hi, count(p.n_x), &tcfg)?;
    let mut h_csv = Csv::new("x,beta,H");
    let mut l_csv = Csv::new("x,alpha,L,beta_star,finite");
    let mut violations = 0;
    for t in surface.tables() {
        for (b, h) in t.beta_grid.nodes().iter().zip(&t.h_values) {
            h_csv.row(&[real(t.x.x()), real(*b), real(*h)]);
        }
        for ((a, l), bs) in t.alpha_grid.nodes().iter().zip(&t.l_values).zip(&t.beta_star) {
            let (value, finite) = match l {
                Extended::Finite(v) => (*v, 1),
                Extended::Infinite { .. } => (f64::INFINITY, 0),
            };
            l_csv.row(&[real(t.x.x()), real(*a), real(value), real(*bs), finite.to_string()]);
        }
        violations += t.invariant_violations(1e-9).len();
    }
    report.files.push(h_csv.write(&cfg.output_dir, "rate_h.csv")?);
    report.files.push(l_csv.write(&cfg.output_dir, "rate_l.csv")?);
    let first = &surface.tables()[0];
    report.put("provenance", first.provenance.as_str());
    report.put("beta_max", real(first.beta_max()));
    report.put("tables", surface.tables().len());
    report.put("invariant_violations", violations);
    Ok(())
}

/// Rate surface, attractors and barrier matrix shared by the landscape commands.
struct Landscape {
    surface: RateSurface,
    set: AttractorSet,
    structure: TransitionStructure,
}

fn landscape(system: &SystemSpec, p: &QpParams) -> Result<Landscape, CliError> {
    system.require_scalar()?;
    let (lo, hi) = (system.slow_domain.lo.x(), system.slow_domain.hi.x());
    let surface = RateSurface::build(system, lo, hi, count(p.n_x), &table_config(p.n_y))?;
    let set = attractors_of(&surface, system)?;
    let method = match p.method {
        QpMethod::Dp => BarrierMethod::Dp {
            n_x: count(p.dp_nodes),
            speeds: log_speed_grid(system.drift.bound, count(p.speeds)),
        },
        QpMethod::HjRoot => BarrierMethod::HjRoot {
            n_cells: count(p.n_cells),
        },
    };
    let structure = if set.len() >= 2 {
        transition_matrix(&set, &surface, &method)?
    } else {
        TransitionStructure::from_climbs(vec![0.0], vec![0.0])
    };
    Ok(Landscape {
        surface,
        set,
        structure,
    })
}

fn put_landscape(report: &mut Report, l: &Landscape) {
    report.put("attractors", join(l.set.attractors.iter().map(|a| a.x())));
    report.put("separators", join(l.set.separators.iter().map(|a| a.x())));
}

fn barrier_csv(l: &Landscape) -> Csv {
    let mut csv = Csv::new("i,j,R_ij");
    for (i, row) in l.structure.r.iter().enumerate() {
        for (j, r) in row.iter().enumerate() {
            if i != j {
                csv.row(&[i.to_string(), j.to_string(), real(r.lower())]);
            }
        }
    }
    csv
}

/// `R(source -> x)` by composing climbs between wells with the local climb
/// inside the target well; `None` where the local climb is not uphill or
/// its momentum lies beyond the tabulated bracket.
fn composite_field(l: &Landscape, i: usize, x: f64, n_cells: usize) -> Result<Option<f64>, CliError> {
    let j = l.set.basin_of(x).unwrap_or(if x < l.set.attractors[0].x() {
        0
    } else {
        l.set.len() - 1
    });
    let o = l.set.attractors[j].x();
    let across = if i == j { 0.0 } else { l.structure.r[i][j].lower() };
    let free = (j > i && x <= o) || (j < i && x >= o);
    if free || x == o {
        return Ok(Some(across));
    }
    let (lo, hi) = l.surface.x_range();
    let width = hi - lo;
    let cells = ((n_cells as f64 * (x - o).abs() / width).ceil() as usize).max(1);
    Ok(match hj_root_quasipotential(&l.surface, o, x, cells) {
        Ok(HjRoot::Cost(r)) => Some(across + r),
        Ok(HjRoot::NoSecondRoot { .. }) | Err(CoreError::NoRoot(_)) => None,
        Ok(HjRoot::Unreachable { .. }) => Some(f64::INFINITY),
        Err(e) => return Err(e.into()),
    })
}

fn quasipotential(cfg: &RunConfig, p: &QpParams, report: &mut Report) -> Result<(), CliError> {
    let system = two_scale(cfg)?;
    let l = landscape(&system, p)?;
    let (lo, hi) = l.surface.x_range();
    let grid = UniformGrid::spanning(lo, hi, count(p.dp_nodes));
    let mut csv = Csv::new("source,x,R");
    match p.method {
        QpMethod::Dp => {
            let graph = DpGraph::new(&l.surface, grid, &log_speed_grid(system.drift.bound, count(p.speeds)))?;
            for a in &l.set.attractors {
                let field = graph.solve(a.x());
                for (k, r) in field.r.iter().enumerate() {
                    csv.row(&[real(a.x()), real(grid.node(k)), r.map_or("nan".into(), real)]);
                }
            }
        }
        QpMethod::HjRoot => {
            let mut unresolved = 0;
            for (i, a) in l.set.attractors.iter().enumerate() {
                for x in grid.nodes() {
                    let r = composite_field(&l, i, x, count(p.n_cells))?;
                    unresolved += usize::from(r.is_none());
                    csv.row(&[real(a.x()), real(x), r.map_or("nan".into(), real)]);
                }
            }
            report.put("unresolved_points", unresolved);
        }
    }
    report.files.push(csv.write(&cfg.output_dir, "quasipotential.csv")?);
    report
        .files
        .push(barrier_csv(&l).write(&cfg.output_dir, "barriers.csv")?);
    put_landscape(report, &l);
    report.put("method", if p.method == QpMethod::Dp { "dp" } else { "hj-root" });
    report.put("R_i", join(l.structure.r_min.iter().map(|r| r.lower())));
    Ok(())
}

fn predict_occupation(cfg: &RunConfig, p: &QpParams, report: &mut Report) -> Result<(), CliError> {
    let system = two_scale(cfg)?;
    let l = landscape(&system, p)?;
    let eps = system.epsilon;
    let w = igraph_weights(&l.structure.r, eps)?;
    let mut csv = Csv::with_comment(&format!("epsilon = {}", real(eps)), "i,Q_i,prediction_i,log_Q_i");
    for (i, (lq, pr)) in w.log_q.iter().zip(&w.prediction).enumerate() {
        csv.row(&[i.to_string(), real(lq.exp()), real(*pr), real(*lq)]);
    }
    report.files.push(csv.write(&cfg.output_dir, "occupation.csv")?);
    report
        .files
        .push(barrier_csv(&l).write(&cfg.output_dir, "barriers.csv")?);
    put_landscape(report, &l);
    report.put("epsilon", real(eps));
    report.put("prediction", join(w.prediction.iter().copied()));
    if l.set.len() >= 2 {
        let exits: Vec<f64> = l
            .structure
            .r_min
            .iter()
            .map(|r| predict_exit_time(r.lower(), eps, 0.0).point)
            .collect();
        report.put("exit_time_prediction", join(exits));
    }
    Ok(())
}

fn boundary_chain(cfg: &RunConfig, p: &ChainParams, report: &mut Report) -> Result<(), CliError> {
    let system = two_scale(cfg)?;
    system.require_scalar()?;
    let l = landscape(&system, &p.qp)?;
    let found: Vec<f64> = l.set.attractors.iter().map(|a| a.x()).collect();
    let centers = p.attractors.clone().unwrap_or_else(|| found.clone());
    let attractors: Vec<SlowVec> = centers.iter().map(|c| SlowVec::scalar(*c)).collect();
    let mut rng = RngStream::new(cfg.seed, 0);
    let log = transition_sequence(
        &system,
        &attractors,
        p.delta,
        count(p.transitions),
        SlowVec::scalar(p.x0),
        p.y0.policy(&system.driver),
        p.max_steps,
        &mut rng,
    )?;
    let mut csv = Csv::new("k,attractor,entry_time,sojourn");
    for (k, e) in log.entries.iter().enumerate() {
        csv.row(&[
            (k + 1).to_string(),
            e.attractor.to_string(),
            real(e.entry_time),
            real(e.sojourn),
        ]);
    }
    report.files.push(csv.write(&cfg.output_dir, "transitions.csv")?);
    let freq = log.visit_frequencies();
    // predictions apply when the chain runs on the attractors of the landscape
    let aligned = centers.len() == found.len() && centers.iter().zip(&found).all(|(c, f)| (c - f).abs() < p.delta);
    let prediction = if aligned && found.len() >= 2 {
        Some(igraph_weights(&l.structure.r, system.epsilon)?)
    } else {
        None
    };
    let mut visits = Csv::new("i,x,visits,frequency,prediction");
    for (i, c) in centers.iter().enumerate() {
        let pred = prediction.as_ref().map_or(f64::NAN, |w| w.prediction[i]);
        visits.row(&[
            i.to_string(),
            real(*c),
            log.visit_counts[i].to_string(),
            real(freq[i]),
            real(pred),
        ]);
    }
    report.files.push(visits.write(&cfg.output_dir, "visits.csv")?);
    report.put("transitions", log.entries.len());
    report.put("steps", log.steps);
    report.put("cap_reached", log.cap_reached);
    report.put(
        "start_attractor",
        log.start_attractor.map_or("none".into(), |a| a.to_string()),
    );
    if let Some(w) = &prediction {
        if log.visit_counts.iter().all(|c| *c > 0) {
            let eps = system.epsilon;
            let mut worst: f64 = 0.0;
            for j in 0..freq.len() {
                for k in 0..freq.len() {
                    let d = eps * (freq[j] / freq[k]).ln() - eps * (w.log_q[j] - w.log_q[k]);
                    worst = worst.max(d.abs());
                }
            }
            report.put("max_log_order_gap", real(worst));
        } else {
            report.put("max_log_order_gap", "unavailable: some attractor never visited");
        }
    }
    Ok(())
}

fn three_scale(cfg: &RunConfig) -> Result<ThreeScaleSpec, CliError> {
    match cfg.system.build()? {
        BuiltSystem::ThreeScale(s) => Ok(s),
        BuiltSystem::TwoScale(_) => Err(ConfigError::Invalid("resonance needs a three-scale system".into()).into()),
    }
}

fn resonance(cfg: &RunConfig, p: &ResonanceParams, report: &mut Report) -> Result<(), CliError> {
    let spec = three_scale(cfg)?;
    let grid = UniformGrid::spanning(p.v_lo, p.v_hi, count(p.v_nodes));
    let table = BarrierTable::build(&spec, grid, count(p.n_y), count(p.n_cells))?;
    let levels = table.levels(spec.rho)?;
    let t_pred = table.period(&levels)?;
    let at_v0 = table.barriers[grid.nearest(p.v0)];
    let mut rng = RngStream::new(cfg.seed, 0);
    let run = run_three_scale(
        &spec,
        p.v0,
        p.x0,
        p.y0,
        p.steps,
        p.subsample,
        &[at_v0.o1, at_v0.o2],
        p.radius,
        &mut rng,
    )?;
    let t: Vec<f64> = run.trace.iter().map(|q| q.t).collect();
    let v: Vec<f64> = run.trace.iter().map(|q| q.v).collect();
    let mut trace = Csv::new("t,V");
    for (a, b) in t.iter().zip(&v) {
        trace.row(&[real(*a), real(*b)]);
    }
    report.files.push(trace.write(&cfg.output_dir, "trace.csv")?);
    let (t_emp, reversals, phases) = match empirical_period(&t, &v) {
        Ok(e) => (e.period, e.reversals, e.phases),
        Err(slowfast_core::Error::TooFewReversals(n)) => (f64::NAN, Vec::new(), n + 1),
        Err(e) => return Err(e.into()),
    };
    let mut rev = Csv::new("k,reversal_time,direction");
    for (k, r) in reversals.iter().enumerate() {
        rev.row(&[(k + 1).to_string(), real(r.time), r.direction.to_string()]);
    }
    report.files.push(rev.write(&cfg.output_dir, "reversals.csv")?);
    let mut line = Csv::new("rho,v_minus,v_plus,T_pred,T_emp");
    line.row(&[
        real(spec.rho),
        real(levels.v_minus),
        real(levels.v_plus),
        real(t_pred),
        real(t_emp),
    ]);
    report.files.push(line.write(&cfg.output_dir, "resonance.csv")?);
    report.put("delta", real(spec.delta));
    report.put("lambda_star", real(levels.lambda_star));
    report.put("levels_valid", levels.valid);
    report.put(
        "rho,v_minus,v_plus,T_pred,T_emp",
        [spec.rho, levels.v_minus, levels.v_plus, t_pred, t_emp]
            .map(real)
            .join(","),
    );
    report.put("phases", phases);
    report.put("x_markers", run.markers.len());
    if cfg.emit_svg {
        let svg = emit_svg(
            &PlotData::Trace { t: &t, v: &v },
            &format!("{} slowest coordinate", spec.name),
        )?;
        report.files.push(write_file(&cfg.output_dir, "trace.svg", &svg)?);
    }
    Ok(())
}
