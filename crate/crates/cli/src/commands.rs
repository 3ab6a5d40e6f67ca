//! Subcommand implementations. Each writes its CSV to `--out` or stdout.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rplmac_core::metrics::{MetricKind, MetricRegistry};
use rplmac_core::selector::{feasibility_map, select, SearchSpace, SelectionProblem};
use rplmac_core::solver::{solve_network_with, NetworkSolution};
use rplmac_core::topology::{
    build_dodag, generate_random_topology, save_topology, Dodag, Topology,
};
use rplmac_sim::{run_replications, run_simulation, ReplicationSummary, SimReport};

use crate::args::{CompareArgs, GenArgs, SelectArgs, SimulateArgs};
use crate::config::{parse_grid, parse_sweep, ExperimentConfig};

/// Successful completion, or completion with a model that did not converge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    NonConvergence,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::NonConvergence => 2,
        }
    }

    fn from_converged(converged: bool) -> Self {
        if converged {
            Status::Success
        } else {
            Status::NonConvergence
        }
    }
}

pub const SOLVE_HEADER: [&str; 7] = [
    "node",
    "q_pps",
    "alpha",
    "e2e_reliability",
    "e2e_delay_s",
    "power_w",
    "parent",
];

pub const SIMULATE_EXTRA: [&str; 4] = [
    "switches",
    "e2e_reliability_ci95",
    "e2e_delay_s_ci95",
    "power_w_ci95",
];

pub const COMPARE_HEADER: [&str; 7] = [
    "metric",
    "source",
    "node",
    "e2e_reliability",
    "e2e_delay_s",
    "power_w",
    "switches",
];

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            Box::new(BufWriter::new(File::create(p).with_context(|| {
                format!("out: cannot create {}", p.display())
            })?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn csv_writer(cfg: &ExperimentConfig) -> Result<csv::Writer<Box<dyn Write>>> {
    Ok(csv::Writer::from_writer(open_output(cfg.out.as_deref())?))
}

fn num(v: f64) -> String {
    v.to_string()
}

fn prepare(cfg: &ExperimentConfig) -> Result<(Topology, Dodag)> {
    let topo = cfg.load_topology()?;
    let dodag = build_dodag(&topo).context("topology")?;
    Ok((topo, dodag))
}

fn solve(
    cfg: &ExperimentConfig,
    topo: &Topology,
    dodag: &Dodag,
    metric: &MetricKind,
) -> Result<NetworkSolution> {
    let selector = MetricRegistry::builtin().build(metric).context("metric")?;
    solve_network_with(
        topo,
        dodag,
        selector.as_ref(),
        &cfg.mac,
        &cfg.timing,
        &cfg.profile,
        &cfg.solver_options(),
    )
    .context("solve")
}

pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<Status> {
    let metric = cfg.metric_kind()?;
    let (topo, dodag) = prepare(cfg)?;
    let solution = solve(cfg, &topo, &dodag, &metric)?;
    let mut w = csv_writer(cfg)?;
    w.write_record(SOLVE_HEADER)?;
    for row in solution.rows(&topo) {
        w.write_record([
            row.node,
            num(row.q_pps),
            num(row.alpha),
            num(row.e2e_reliability),
            num(row.e2e_delay_s),
            num(row.power_w),
            row.parent,
        ])?;
    }
    w.flush()?;
    if !solution.converged {
        eprintln!(
            "warning: fixed point did not converge within {} iterations",
            solution.iterations
        );
    }
    Ok(Status::from_converged(solution.converged))
}

fn simulate_summary(
    cfg: &ExperimentConfig,
    topo: &Topology,
    dodag: &Dodag,
    metric: MetricKind,
    trace: Option<(&mut dyn Write, &mut usize)>,
) -> Result<ReplicationSummary> {
    let sim_cfg = cfg.sim_config(metric);
    let runs = run_replications(topo, dodag, &sim_cfg, cfg.replications).context("simulate")?;
    if let Some((out, next_run)) = trace {
        for (t, _) in &runs {
            t.write_jsonl(*next_run, out).context("trace")?;
            *next_run += 1;
        }
    }
    let reports: Vec<SimReport> = runs.into_iter().map(|r| r.1).collect();
    Ok(ReplicationSummary::from_reports(&reports))
}

pub fn cmd_simulate(cfg: &ExperimentConfig, args: &SimulateArgs) -> Result<Status> {
    let mut cfg = cfg.clone();
    if let Some(path) = &args.trace {
        cfg.trace = Some(path.clone());
    }
    let metric = cfg.metric_kind()?;
    let (base, dodag) = prepare(&cfg)?;
    cfg.sim_config(metric).validate().context("simulate")?;
    let sweep = args.lambda_sweep.as_deref().map(parse_sweep).transpose()?;

    let mut trace_out = cfg
        .trace
        .as_deref()
        .map(|p| open_output(Some(p)))
        .transpose()?;
    let mut next_run = 0usize;
    let mut w = csv_writer(&cfg)?;
    let mut header: Vec<&str> = Vec::new();
    if sweep.is_some() {
        header.push("sweep_lambda_pps");
    }
    header.extend(SOLVE_HEADER);
    header.extend(SIMULATE_EXTRA);
    w.write_record(&header)?;

    let points: Vec<Option<f64>> = match &sweep {
        Some(v) => v.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    for point in points {
        let mut topo = base.clone();
        if let Some(rate) = point {
            topo.set_uniform_lambda(rate).context("lambda-sweep")?;
            for (id, r) in &cfg.lambda_overrides {
                let node = topo.index_of(id).context("lambda_overrides")?;
                topo.set_lambda(node, *r)?;
            }
        }
        let trace = trace_out
            .as_mut()
            .map(|o| (o.as_mut() as &mut dyn Write, &mut next_run));
        let summary = simulate_summary(&cfg, &topo, &dodag, metric, trace)?;
        for n in &summary.nodes {
            let mut record: Vec<String> = Vec::new();
            if let Some(rate) = point {
                record.push(num(rate));
            }
            record.extend([
                n.node.clone(),
                num(n.q_pps),
                num(n.alpha),
                num(n.e2e_reliability),
                num(n.e2e_delay_s),
                num(n.power_w),
                n.parent.clone(),
                num(n.switches),
                num(n.e2e_reliability_ci95),
                num(n.e2e_delay_s_ci95),
                num(n.power_w_ci95),
            ]);
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    if let Some(mut o) = trace_out {
        o.flush().context("trace")?;
    }
    Ok(Status::Success)
}

pub fn cmd_select(cfg: &ExperimentConfig, args: &SelectArgs) -> Result<Status> {
    let (topo, dodag) = prepare(cfg)?;
    let problem = SelectionProblem {
        topo: &topo,
        dodag: &dodag,
        r_min_grid: parse_grid("rmin-grid", &args.rmin_grid)?,
        d_max_grid: parse_grid("dmax-grid", &args.dmax_grid)?,
        space: SearchSpace::parse(&args.space).context("space")?,
        n: cfg.mac.n,
        timing: cfg.timing,
        profile: cfg.profile,
    };
    if problem.r_min_grid.iter().any(|r| *r > 1.0) {
        bail!("rmin-grid: reliability floors must lie in [0, 1]");
    }
    let started = Instant::now();
    let result = select(&problem).context("select")?;
    eprintln!(
        "evaluated {} configurations in {:.2} s",
        result.outcomes.len(),
        started.elapsed().as_secs_f64()
    );
    let mut out = open_output(cfg.out.as_deref())?;
    out.write_all(feasibility_map(&result).as_bytes())?;
    out.flush()?;

    if args.validate_sim {
        let mut checked: Vec<usize> = result.cells.iter().filter_map(|c| c.choice).collect();
        checked.sort_unstable();
        checked.dedup();
        for k in checked {
            let outcome = &result.outcomes[k];
            let sim_cfg = rplmac_sim::SimConfig {
                mac: outcome.params,
                ..cfg.sim_config(outcome.metric)
            };
            let (_, report) = run_simulation(&topo, &dodag, &sim_cfg).context("validate-sim")?;
            let cells: Vec<String> = result
                .cells
                .iter()
                .filter(|c| c.choice == Some(k))
                .filter(|c| !(report.min_reliability >= c.r_min && report.max_delay_s <= c.d_max))
                .map(|c| format!("({}, {})", c.r_min, c.d_max))
                .collect();
            eprintln!(
                "validate-sim {}: min reliability {:.4}, max delay {:.4} s, max power {:.3} mW{}",
                outcome.label(),
                report.min_reliability,
                report.max_delay_s,
                report.max_power_w * 1e3,
                if cells.is_empty() {
                    String::new()
                } else {
                    format!(", violates {}", cells.join(" "))
                }
            );
        }
    }
    Ok(Status::Success)
}

pub fn cmd_compare(cfg: &ExperimentConfig, args: &CompareArgs) -> Result<Status> {
    let (run_model, run_sim) = match args.mode.trim().to_ascii_lowercase().as_str() {
        "solve" => (true, false),
        "simulate" => (false, true),
        "both" => (true, true),
        other => bail!("mode: expected solve, simulate or both, got '{other}'"),
    };
    let metrics: Vec<MetricKind> = args
        .metrics
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| cfg.metric_named(s))
        .collect::<Result<_>>()?;
    if metrics.is_empty() {
        bail!("metrics: at least one metric is required");
    }
    let (topo, dodag) = prepare(cfg)?;
    if run_sim {
        cfg.sim_config(metrics[0]).validate().context("simulate")?;
    }

    let mut status = Status::Success;
    let mut w = csv_writer(cfg)?;
    w.write_record(COMPARE_HEADER)?;
    for metric in &metrics {
        if run_model {
            let solution = solve(cfg, &topo, &dodag, metric)?;
            if !solution.converged {
                status = Status::NonConvergence;
            }
            for row in solution.rows(&topo) {
                w.write_record([
                    metric.name().to_string(),
                    "model".into(),
                    row.node,
                    num(row.e2e_reliability),
                    num(row.e2e_delay_s),
                    num(row.power_w),
                    "0".into(),
                ])?;
            }
        }
        if run_sim {
            let summary = simulate_summary(cfg, &topo, &dodag, *metric, None)?;
            for n in &summary.nodes {
                w.write_record([
                    metric.name().to_string(),
                    "sim".into(),
                    n.node.clone(),
                    num(n.e2e_reliability),
                    num(n.e2e_delay_s),
                    num(n.power_w),
                    num(n.switches),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(status)
}

pub fn cmd_gen_topology(cfg: &ExperimentConfig, args: &GenArgs) -> Result<Status> {
    let topo =
        generate_random_topology(args.nodes, cfg.seed, args.density).context("nodes/density")?;
    let mut out = open_output(cfg.out.as_deref())?;
    out.write_all(save_topology(&topo).as_bytes())?;
    out.flush()?;
    Ok(Status::Success)
}
