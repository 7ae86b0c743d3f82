/*
Copyright 2026 The msgan Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
//! Paired experiment runners and their CSV reports.
//!
//! Each trial `i` draws from `rng::stream(seed, 3i)` for its task or start,
//! `3i + 1` for the random method and `3i + 2` for the learned one, so both
//! methods see the same problem and results are independent of scheduling.
//! Wall times are kept out of the row CSV and written to a separate timing
//! table, which keeps the main output byte-reproducible.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::costs::{CostBundle, Target};
use crate::error::{Error, Result};
use crate::gan::{coverage, count_modes, kmeans, occupied_clusters, uniform_configuration, Dataset, GeneratorEnsemble};
use crate::kinematics::Configuration;
use crate::optim::{project, solve_ik, OptResult};
use crate::planner::{plan, validate_path, PlanOutcome, Sampler};
use crate::rng;
use crate::scenario::{CoverageSpec, PlanSpec, Scenario};

const TASK_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Random,
    Gan,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Random, Method::Gan];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Gan => "gan",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Method::Random),
            "gan" => Ok(Method::Gan),
            _ => Err(Error::Format(format!("unknown method {s:?}"))),
        }
    }
}

/// One solver run. `iterations` counts L-BFGS iterations for projection and
/// IK trials and planner loop iterations for planning trials.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub trial: usize,
    pub method: Method,
    pub success: bool,
    pub iterations: usize,
    pub projections: usize,
    pub projection_iterations: usize,
    pub extensions: usize,
    pub time: Duration,
}

const ROW_HEADER: &str = "trial,method,success,iterations,projections,projection_iterations,extensions";

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population mean and standard deviation; zero for an empty input.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

/// Aggregates for one method. `*_success` fields use successful trials only.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub trials: usize,
    pub successes: usize,
    pub iterations: MeanStd,
    pub iterations_success: MeanStd,
    pub projections: MeanStd,
    pub projections_success: MeanStd,
    pub extensions: MeanStd,
    pub extensions_success: MeanStd,
    pub time: MeanStd,
    pub time_success: MeanStd,
}

impl MethodSummary {
    pub fn success_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }

    fn from_rows(method: Method, rows: &[TrialRow]) -> Self {
        let all: Vec<&TrialRow> = rows.iter().filter(|r| r.method == method).collect();
        let ok: Vec<&TrialRow> = all.iter().copied().filter(|r| r.success).collect();
        let stat = |set: &[&TrialRow], f: fn(&TrialRow) -> f64| MeanStd::of(&set.iter().map(|r| f(r)).collect::<Vec<_>>());
        MethodSummary {
            method,
            trials: all.len(),
            successes: ok.len(),
            iterations: stat(&all, |r| r.iterations as f64),
            iterations_success: stat(&ok, |r| r.iterations as f64),
            projections: stat(&all, |r| r.projections as f64),
            projections_success: stat(&ok, |r| r.projections as f64),
            extensions: stat(&all, |r| r.extensions as f64),
            extensions_success: stat(&ok, |r| r.extensions as f64),
            time: stat(&all, |r| r.time.as_secs_f64()),
            time_success: stat(&ok, |r| r.time.as_secs_f64()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<TrialRow>,
}

impl ExperimentReport {
    pub fn summary(&self, method: Method) -> MethodSummary {
        MethodSummary::from_rows(method, &self.rows)
    }

    pub fn rows_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }

    /// Counter aggregates per method; does not depend on wall time.
    pub fn summary_csv(&self) -> String {
        summary_csv(&self.rows)
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("trial,method,time_s\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:?}", r.trial, r.method.as_str(), r.time.as_secs_f64());
        }
        s.push_str("\nmethod,T_ave,T_ave_std,T_success_ave,T_success_std\n");
        for m in Method::ALL {
            let sm = self.summary(m);
            let _ = writeln!(
                s,
                "{},{:?},{:?},{:?},{:?}",
                m.as_str(),
                sm.time.mean,
                sm.time.std,
                sm.time_success.mean,
                sm.time_success.std
            );
        }
        s
    }
}

fn rows_to_csv(rows: &[TrialRow]) -> String {
    let mut s = String::from(ROW_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.trial,
            r.method.as_str(),
            r.success,
            r.iterations,
            r.projections,
            r.projection_iterations,
            r.extensions
        );
    }
    s
}

fn summary_csv(rows: &[TrialRow]) -> String {
    let mut s = String::from(
        "method,trials,successes,success_pct,iterations_mean,iterations_std,iterations_success_mean,iterations_success_std,\
projections_mean,projections_std,projections_success_mean,projections_success_std,\
extensions_mean,extensions_std,extensions_success_mean,extensions_success_std\n",
    );
    for m in Method::ALL {
        let sm = MethodSummary::from_rows(m, rows);
        let _ = write!(s, "{},{},{},{:?}", m.as_str(), sm.trials, sm.successes, 100.0 * sm.success_rate());
        for st in [
            sm.iterations,
            sm.iterations_success,
            sm.projections,
            sm.projections_success,
            sm.extensions,
            sm.extensions_success,
        ] {
            let _ = write!(s, ",{:?},{:?}", st.mean, st.std);
        }
        s.push('\n');
    }
    s
}

fn parse_rows(text: &str) -> Result<Vec<TrialRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(ROW_HEADER) {
        return Err(Error::Format("unexpected row header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Format(format!("bad row {l:?}")));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|e| Error::Format(format!("{s:?}: {e}")));
            Ok(TrialRow {
                trial: num(f[0])?,
                method: Method::parse(f[1])?,
                success: f[2].parse().map_err(|e| Error::Format(format!("{:?}: {e}", f[2])))?,
                iterations: num(f[3])?,
                projections: num(f[4])?,
                projection_iterations: num(f[5])?,
                extensions: num(f[6])?,
                time: Duration::ZERO,
            })
        })
        .collect()
}

/// Recomputes the summary table from the row table and checks that it
/// matches `summary` exactly.
pub fn verify_summary(rows_csv: &str, summary: &str) -> Result<()> {
    let rows = parse_rows(rows_csv)?;
    if rows_to_csv(&rows) != rows_csv {
        return Err(Error::Format("row table does not round-trip".into()));
    }
    if summary_csv(&rows) != summary {
        return Err(Error::Format("summary does not match row data".into()));
    }
    Ok(())
}

/// An on-manifold, collision-free configuration obtained by projecting
/// uniform samples; its end-effector position serves as a reachable task.
fn sample_valid<R: rand::Rng + ?Sized>(
    scenario: &Scenario,
    accept: impl Fn(&Configuration) -> Result<bool>,
    rng: &mut R,
) -> Result<Configuration> {
    let chain = &scenario.chain;
    for _ in 0..TASK_ATTEMPTS {
        let q = uniform_configuration(chain, rng);
        let r = project(&scenario.constraints, &q, &scenario.lbfgs)?;
        if r.success() && !chain.in_collision(&r.q_final, &scenario.world)? && accept(&r.q_final)? {
            return Ok(r.q_final);
        }
    }
    Err(Error::InfeasibleScenario(format!(
        "no valid configuration found in {TASK_ATTEMPTS} attempts"
    )))
}

fn reachable_task(scenario: &Scenario, rng: &mut rng::Rng) -> Result<[f64; 2]> {
    let q = sample_valid(scenario, |_| Ok(true), rng)?;
    let p = scenario.chain.forward_kinematics(&q)?;
    Ok([p.x, p.y])
}

fn seed_config(
    method: Method,
    scenario: &Scenario,
    ensemble: &GeneratorEnsemble,
    task: [f64; 2],
    rng: &mut rng::Rng,
) -> Result<Configuration> {
    match method {
        Method::Random => Ok(uniform_configuration(&scenario.chain, rng)),
        Method::Gan => ensemble.sample(&task[..ensemble.task_dim()], rng),
    }
}

fn check_ensemble(scenario: &Scenario, ensemble: &GeneratorEnsemble) -> Result<()> {
    if ensemble.dof() != scenario.chain.dof() {
        return Err(Error::dim(scenario.chain.dof(), ensemble.dof()));
    }
    Ok(())
}

fn opt_row(trial: usize, method: Method, r: &OptResult, verify: &CostBundle, time: Duration) -> Result<TrialRow> {
    let rechecked = verify.evaluate(&r.q_final)?.all_below_threshold;
    if rechecked != r.success() {
        return Err(Error::NumericalFailure(format!(
            "trial {trial} ({}): reported success {} but re-evaluation gives {rechecked}",
            method.as_str(),
            r.success()
        )));
    }
    Ok(TrialRow {
        trial,
        method,
        success: r.success(),
        iterations: r.iterations,
        projections: 1,
        projection_iterations: r.iterations,
        extensions: 0,
        time,
    })
}

fn run_trials(trials: usize, f: impl Fn(usize) -> Result<[TrialRow; 2]> + Sync + Send) -> Result<ExperimentReport> {
    let pairs = (0..trials).into_par_iter().map(f).collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        rows: pairs.into_iter().flatten().collect(),
    })
}

fn trial_stream(seed: u64, trial: usize, k: u64) -> rng::Rng {
    rng::stream(seed, 3 * trial as u64 + k)
}

/// Projection from a uniform seed vs a generator seed for the same task.
pub fn eval_projection(scenario: &Scenario, ensemble: &GeneratorEnsemble, trials: usize, seed: u64) -> Result<ExperimentReport> {
    check_ensemble(scenario, ensemble)?;
    run_trials(trials, |i| {
        let task = reachable_task(scenario, &mut trial_stream(seed, i, 0))?;
        let run = |method: Method, k: u64| -> Result<TrialRow> {
            let mut r = trial_stream(seed, i, k);
            let q0 = seed_config(method, scenario, ensemble, task, &mut r)?;
            let start = Instant::now();
            let res = project(&scenario.constraints, &q0, &scenario.lbfgs)?;
            opt_row(i, method, &res, &scenario.constraints, start.elapsed())
        };
        Ok([run(Method::Random, 1)?, run(Method::Gan, 2)?])
    })
}

/// IK toward a reachable end-effector position from a uniform seed vs a generator seed.
pub fn eval_ik(scenario: &Scenario, ensemble: &GeneratorEnsemble, trials: usize, seed: u64) -> Result<ExperimentReport> {
    check_ensemble(scenario, ensemble)?;
    run_trials(trials, |i| {
        let task = reachable_task(scenario, &mut trial_stream(seed, i, 0))?;
        let target = Target::Position(task);
        let verify = scenario.ik.with_task_target(&target)?;
        let run = |method: Method, k: u64| -> Result<TrialRow> {
            let mut r = trial_stream(seed, i, k);
            let q0 = seed_config(method, scenario, ensemble, task, &mut r)?;
            let start = Instant::now();
            let res = solve_ik(&scenario.ik, &q0, &target, &scenario.lbfgs)?;
            opt_row(i, method, &res, &verify, start.elapsed())
        };
        Ok([run(Method::Random, 1)?, run(Method::Gan, 2)?])
    })
}

fn plan_spec(scenario: &Scenario) -> Result<&PlanSpec> {
    scenario
        .plan
        .as_ref()
        .ok_or_else(|| Error::Config("scenario has no [plan] section".into()))
}

/// Start configuration of planning trial `trial`: valid, collision-free and
/// with the end effector inside the scenario's start box.
pub fn plan_start(scenario: &Scenario, seed: u64, trial: usize) -> Result<Configuration> {
    let spec = plan_spec(scenario)?;
    let in_box = |q: &Configuration| -> Result<bool> {
        let p = scenario.chain.forward_kinematics(q)?;
        let b = &spec.start_box;
        Ok(p.x >= b.min[0] && p.x <= b.max[0] && p.y >= b.min[1] && p.y <= b.max[1])
    };
    sample_valid(scenario, in_box, &mut trial_stream(seed, trial, 0))
}

/// Single planning query for trial 0 of `seed`, with the mixed learned
/// sampler when an ensemble is given and the uniform sampler otherwise.
pub fn plan_once(scenario: &Scenario, ensemble: Option<&GeneratorEnsemble>, seed: u64) -> Result<(Configuration, PlanOutcome)> {
    let spec = plan_spec(scenario)?;
    let q0 = plan_start(scenario, seed, 0)?;
    let (sampler, k) = match ensemble {
        Some(e) => {
            check_ensemble(scenario, e)?;
            (
                Sampler::Mixed {
                    ensemble: e,
                    task_box: scenario.task_box,
                    p_uniform: scenario.planner.uniform_mix_prob,
                },
                2,
            )
        }
        None => (Sampler::Uniform, 1),
    };
    let out = plan(
        &scenario.scene(),
        &q0,
        &Target::Position(spec.goal),
        &sampler,
        &scenario.planner,
        &mut trial_stream(seed, 0, k),
    )?;
    Ok((q0, out))
}

/// One configuration per row, columns `q0..q{n-1}`.
pub fn path_table(path: &[Configuration]) -> String {
    let n = path.first().map_or(0, |q| q.len());
    let mut s = (0..n).map(|j| format!("q{j}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for q in path {
        let row: Vec<String> = q.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Constrained RRT with the uniform sampler vs the mixed learned sampler
/// from the same random start. Successful paths are re-validated.
pub fn bench_plan(scenario: &Scenario, ensemble: &GeneratorEnsemble, trials: usize, seed: u64) -> Result<ExperimentReport> {
    check_ensemble(scenario, ensemble)?;
    let spec = plan_spec(scenario)?;
    let scene = scenario.scene();
    let target = Target::Position(spec.goal);
    let opts = &scenario.planner;
    run_trials(trials, |i| {
        let q0 = plan_start(scenario, seed, i)?;
        let run = |method: Method, k: u64| -> Result<TrialRow> {
            let sampler = match method {
                Method::Random => Sampler::Uniform,
                Method::Gan => Sampler::Mixed {
                    ensemble,
                    task_box: scenario.task_box,
                    p_uniform: opts.uniform_mix_prob,
                },
            };
            let mut r = trial_stream(seed, i, k);
            let start = Instant::now();
            let (success, stats) = match plan(&scene, &q0, &target, &sampler, opts, &mut r) {
                Ok(out) => {
                    if let Some(path) = &out.path {
                        if let Err(why) = validate_path(&scene, path, 2.0 * opts.step_size)? {
                            return Err(Error::NumericalFailure(format!(
                                "trial {i} ({}): invalid path: {why}",
                                method.as_str()
                            )));
                        }
                    }
                    (out.path.is_some(), out.stats)
                }
                Err(Error::NoGoalFound) => (false, Default::default()),
                Err(e) => return Err(e),
            };
            Ok(TrialRow {
                trial: i,
                method,
                success,
                iterations: stats.iterations,
                projections: stats.projections,
                projection_iterations: stats.projection_iterations,
                extensions: stats.extensions,
                time: start.elapsed(),
            })
        };
        Ok([run(Method::Random, 1)?, run(Method::Gan, 2)?])
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub label: String,
    pub nets: usize,
    pub samples: usize,
    pub coverage: f64,
    pub clusters_occupied: usize,
    pub clusters: usize,
}

#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    /// Number of connected components of the dataset at the mode radius.
    pub modes: usize,
    pub single_samples: Vec<Configuration>,
    pub ensemble_samples: Vec<Configuration>,
}

impl CoverageReport {
    pub fn row(&self, label: &str) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self, epsilon: f64) -> String {
        let mut s = String::from("label,nets,samples,epsilon,coverage,clusters_occupied,clusters,dataset_modes\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:?},{:?},{},{},{}",
                r.label, r.nets, r.samples, epsilon, r.coverage, r.clusters_occupied, r.clusters, self.modes
            );
        }
        s
    }
}

/// Coverage of the dataset by a single generator vs an ensemble, plus the
/// dataset against itself as a reference row.
pub fn coverage_study(
    dataset: &Dataset,
    single: &GeneratorEnsemble,
    ensemble: &GeneratorEnsemble,
    spec: &CoverageSpec,
    seed: u64,
) -> Result<CoverageReport> {
    let data = &dataset.configs;
    let modes = count_modes(data, spec.mode_radius);
    let k = spec.clusters.unwrap_or(modes);
    let (_, labels) = kmeans(data, k, 100, &mut rng::stream(seed, 0))?;
    let draw = |g: &GeneratorEnsemble, k: u64| -> Result<Vec<Configuration>> {
        let mut r = rng::stream(seed, k);
        let tasks: Vec<[f64; 2]> = (0..spec.samples)
            .map(|j| dataset.tasks[j % dataset.len()])
            .collect();
        tasks.iter().map(|t| g.sample(&t[..g.task_dim()], &mut r)).collect()
    };
    let single_samples = draw(single, 1)?;
    let ensemble_samples = draw(ensemble, 2)?;
    let row = |label: &str, nets: usize, s: &[Configuration]| CoverageRow {
        label: label.to_string(),
        nets,
        samples: s.len(),
        coverage: coverage(s, data, spec.epsilon),
        clusters_occupied: occupied_clusters(s, data, &labels, spec.epsilon),
        clusters: k,
    };
    Ok(CoverageReport {
        rows: vec![
            row("dataset", 0, data),
            row("single", single.len(), &single_samples),
            row("ensemble", ensemble.len(), &ensemble_samples),
        ],
        modes,
        single_samples,
        ensemble_samples,
    })
}
