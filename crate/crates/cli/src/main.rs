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

//! `msgan` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msgan::experiment::{self, ExperimentReport};
use msgan::gan::{self, Dataset, GanTrainConfig, GeneratorEnsemble};
use msgan::scenario::Scenario;
use msgan::{rng, svg, Error, Result};

#[derive(Parser)]
#[command(name = "msgan", version, about = "Learned configuration samplers for constrained IK and planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    trials: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Sample and project configurations into a dataset file.
    GenData {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a generator ensemble on a dataset.
    Train {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// TOML file whose keys override the scenario's [gan] section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired projection trials: uniform vs learned initialization.
    EvalProjection(EvalArgs),
    /// Paired IK trials: uniform vs learned initialization.
    EvalIk(EvalArgs),
    /// One planning query; writes the learned-sampler path.
    Plan(EvalArgs),
    /// Paired planning trials: uniform vs mixed learned sampler.
    BenchPlan(EvalArgs),
    /// Dataset coverage by a single net vs the ensemble.
    Coverage {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Output stem; `.svg` and `.csv` files are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::InfeasibleScenario(_) => 3,
        Error::TrainingDiverged(_) => 4,
        _ => 1,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::from_table(&fs::read_to_string(path)?)
}

fn gan_config(scenario: &Scenario, config: Option<&Path>) -> Result<GanTrainConfig> {
    let Some(path) = config else {
        return Ok(scenario.gan.clone());
    };
    let cfg_err = |e: &dyn std::fmt::Display| Error::Config(format!("{}: {e}", path.display()));
    let overrides: toml::Table = toml::from_str(&fs::read_to_string(path)?).map_err(|e| cfg_err(&e))?;
    let mut merged = toml::Table::try_from(&scenario.gan).map_err(|e| cfg_err(&e))?;
    merged.extend(overrides);
    merged.try_into().map_err(|e| cfg_err(&e))
}

fn print_report(report: &ExperimentReport) {
    for m in experiment::Method::ALL {
        let s = report.summary(m);
        println!(
            "{:<6} success {:5.1}%  iter {:.2} ± {:.2}  iter* {:.2}  P {:.1}  E {:.1}  T* {:.4}s",
            m.as_str(),
            100.0 * s.success_rate(),
            s.iterations.mean,
            s.iterations.std,
            s.iterations_success.mean,
            s.projections.mean,
            s.extensions.mean,
            s.time_success.mean,
        );
    }
}

fn emit_report(report: &ExperimentReport, out: &Path) -> Result<()> {
    let rows = report.rows_csv();
    let summary = report.summary_csv();
    experiment::verify_summary(&rows, &summary)?;
    write(out, &rows)?;
    write(&with_suffix(out, ".summary.csv"), &summary)?;
    write(&with_suffix(out, ".timing.csv"), &report.timing_csv())?;
    print_report(report);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { scenario, n, seed, out } => {
            let s = Scenario::load(&scenario)?;
            let (data, stats) = gan::generate_dataset(&s.constraints, &s.world, n, &s.lbfgs, &mut rng::seeded(seed))?;
            write(&out, &data.to_table())?;
            println!("acceptance rate {:.2}% ({} configurations)", 100.0 * stats.acceptance_rate(), data.len());
        }
        Command::Train { scenario, data, config, seed, out } => {
            let s = Scenario::load(&scenario)?;
            let cfg = gan_config(&s, config.as_deref())?;
            let data = load_dataset(&data)?;
            let trained = gan::train(&data, &s.generator_costs(), &cfg, &mut rng::seeded(seed))?;
            trained.ensemble.save(&out)?;
            write(&out.join("history.csv"), &trained.history.to_table())?;
            println!("trained {} nets for {} epochs into {}", trained.ensemble.len(), trained.history.len(), out.display());
        }
        Command::EvalProjection(a) => {
            let (s, e) = (Scenario::load(&a.scenario)?, GeneratorEnsemble::load(&a.model)?);
            emit_report(&experiment::eval_projection(&s, &e, a.trials, a.seed)?, &a.out)?;
        }
        Command::EvalIk(a) => {
            let (s, e) = (Scenario::load(&a.scenario)?, GeneratorEnsemble::load(&a.model)?);
            emit_report(&experiment::eval_ik(&s, &e, a.trials, a.seed)?, &a.out)?;
        }
        Command::BenchPlan(a) => {
            let (s, e) = (Scenario::load(&a.scenario)?, GeneratorEnsemble::load(&a.model)?);
            emit_report(&experiment::bench_plan(&s, &e, a.trials, a.seed)?, &a.out)?;
        }
        Command::Plan(a) => {
            let (s, e) = (Scenario::load(&a.scenario)?, GeneratorEnsemble::load(&a.model)?);
            let (_, outcome) = experiment::plan_once(&s, Some(&e), a.seed)?;
            let st = &outcome.stats;
            match &outcome.path {
                Some(path) => {
                    write(&a.out, &experiment::path_table(path))?;
                    println!("path with {} nodes", path.len());
                }
                None => println!("no path found"),
            }
            println!("iterations {} projections {} extensions {}", st.iterations, st.projections, st.extensions);
        }
        Command::Coverage { scenario, model, out } => {
            let s = Scenario::load(&scenario)?;
            let spec = s
                .coverage
                .clone()
                .ok_or_else(|| Error::Config("scenario has no [coverage] section".into()))?;
            let ensemble = GeneratorEnsemble::load(&model)?;
            let data = match &s.files.dataset {
                Some(p) => load_dataset(p)?,
                None => gan::generate_dataset(&s.constraints, &s.world, s.dataset_size, &s.lbfgs, &mut rng::seeded(0))?.0,
            };
            let single = ensemble.subset(&[0])?;
            let report = experiment::coverage_study(&data, &single, &ensemble, &spec, 0)?;
            let (lo, hi) = (s.chain.joint_lower(), s.chain.joint_upper());
            let pad = |a: f64, b: f64| [a - 0.05 * (b - a), b + 0.05 * (b - a)];
            let picture = svg::scatter(
                &format!("{}: dataset vs ensemble samples", s.name),
                pad(lo[0], hi[0]),
                pad(lo[1], hi[1]),
                &[
                    svg::Series { label: "dataset", points: &data.configs, glyph: svg::Glyph::Dot },
                    svg::Series { label: "ensemble", points: &report.ensemble_samples, glyph: svg::Glyph::Cross },
                ],
            );
            write(&out.with_extension("svg"), &picture)?;
            let csv = report.to_csv(spec.epsilon);
            write(&out.with_extension("csv"), &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("MS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Only fails if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
