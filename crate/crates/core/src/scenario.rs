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
//! Scenario files.
//!
//! A scenario is a TOML document (`schema = 1`) describing the chain,
//! obstacles, constraint and task costs, solver and planner options, GAN
//! training settings and optional planning / coverage studies. Lengths are
//! in meters, angles in radians, masses in kilograms.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::costs::{CostBundle, CostKind, CostTerm};
use crate::costs::{
    DEFAULT_EE_THRESHOLD, DEFAULT_EE_WEIGHT, DEFAULT_LIMIT_THRESHOLD, DEFAULT_LIMIT_WEIGHT,
    DEFAULT_POSTURE_WEIGHT, DEFAULT_STABILITY_THRESHOLD, DEFAULT_STABILITY_WEIGHT,
};
use crate::error::{Error, Result};
use crate::gan::{GanTrainConfig, GeneratorCosts};
use crate::kinematics::{Obstacle, PlanarChain, World};
use crate::optim::{LbfgsOptions, NrOptions};
use crate::planner::{PlannerOptions, Scene, TaskBox};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: u32,
    pub name: String,
    pub chain: ChainSpec,
    #[serde(default)]
    pub world: WorldSpec,
    #[serde(default)]
    pub constraints: Vec<TermSpec>,
    #[serde(default)]
    pub task: TaskSpec,
    pub task_box: Option<TaskBox>,
    #[serde(default)]
    pub lbfgs: LbfgsOptions,
    #[serde(default)]
    pub nr: NrOptions,
    #[serde(default)]
    pub planner: PlannerOptions,
    pub gan: Option<GanTrainConfig>,
    #[serde(default)]
    pub dataset: DatasetSpec,
    pub plan: Option<PlanSpec>,
    pub coverage: Option<CoverageSpec>,
    #[serde(default)]
    pub files: FileSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub name: Option<String>,
    pub link_lengths: Vec<f64>,
    pub link_masses: Option<Vec<f64>>,
    #[serde(default)]
    pub base: [f64; 2],
    pub joint_lower: Vec<f64>,
    pub joint_upper: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    #[serde(default)]
    pub clearance_margin: f64,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TermSpec {
    EePose {
        target: [f64; 3],
        weights: [f64; 3],
        weight: Option<f64>,
        threshold: Option<f64>,
    },
    Posture {
        weights: Option<Vec<f64>>,
        weight: Option<f64>,
    },
    JointLimit {
        weight: Option<f64>,
        threshold: Option<f64>,
    },
    StaticStability {
        lower: f64,
        upper: f64,
        weight: Option<f64>,
        threshold: Option<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub weights: [f64; 3],
    pub weight: f64,
    pub threshold: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            weights: [1.0, 1.0, 0.0],
            weight: DEFAULT_EE_WEIGHT,
            threshold: DEFAULT_EE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub size: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec { size: 5000 }
    }
}

/// Planning queries: random valid starts whose end effector lies in
/// `start_box`, all heading for the end-effector position `goal`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub start_box: TaskBox,
    pub goal: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageSpec {
    pub epsilon: f64,
    pub samples: usize,
    pub ensemble_size: usize,
    /// k for the k-means partition of the dataset; defaults to the number
    /// of dataset modes.
    pub clusters: Option<usize>,
    /// Link radius for counting dataset modes as connected components.
    pub mode_radius: f64,
}

impl Default for CoverageSpec {
    fn default() -> Self {
        CoverageSpec {
            epsilon: 0.3,
            samples: 1000,
            ensemble_size: 5,
            clusters: None,
            mode_radius: 0.15,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSpec {
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

/// A loaded, validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub chain: Arc<PlanarChain>,
    pub world: World,
    /// Constraint-only bundle used for projection.
    pub constraints: CostBundle,
    /// Constraints plus the end-effector position task, used for IK.
    pub ik: CostBundle,
    pub task_box: TaskBox,
    pub lbfgs: LbfgsOptions,
    pub nr: NrOptions,
    pub planner: PlannerOptions,
    pub gan: GanTrainConfig,
    pub dataset_size: usize,
    pub plan: Option<PlanSpec>,
    pub coverage: Option<CoverageSpec>,
    pub files: FileSpec,
}

fn config_err(msg: impl std::fmt::Display) -> Error {
    Error::Config(msg.to_string())
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(config_err)?;
        Scenario::from_file_spec(file)
    }

    /// Loads a scenario; relative `files` entries resolve against the
    /// working directory and must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let s = Scenario::from_toml(&text)?;
        for f in [&s.files.dataset, &s.files.model].into_iter().flatten() {
            if !f.exists() {
                return Err(config_err(format!("referenced file {} does not exist", f.display())));
            }
        }
        Ok(s)
    }

    pub fn from_file_spec(file: ScenarioFile) -> Result<Self> {
        if file.schema != SCHEMA_VERSION {
            return Err(config_err(format!("unsupported schema {} (expected {SCHEMA_VERSION})", file.schema)));
        }
        let c = &file.chain;
        let n = c.link_lengths.len();
        let chain = Arc::new(
            PlanarChain::new(
                c.name.clone().unwrap_or_else(|| file.name.clone()),
                c.link_lengths.clone(),
                c.link_masses.clone().unwrap_or_else(|| vec![1.0; n]),
                c.base,
                c.joint_lower.clone(),
                c.joint_upper.clone(),
            )
            .map_err(config_err)?,
        );
        let world = World::new(file.world.obstacles.clone(), file.world.clearance_margin).map_err(config_err)?;
        let terms = file
            .constraints
            .iter()
            .map(|t| term_from_spec(t, n))
            .collect::<Result<Vec<_>>>()?;
        let constraints = CostBundle::new(chain.clone(), terms).map_err(config_err)?;
        let task = CostTerm::new(
            CostKind::EePose {
                target: [0.0; 3],
                weights: file.task.weights,
                task: true,
            },
            file.task.weight,
            Some(file.task.threshold),
        )
        .map_err(config_err)?;
        let ik = constraints.with_term(task).map_err(config_err)?;
        file.lbfgs.validate().map_err(config_err)?;
        file.planner.validate().map_err(config_err)?;
        let gan = file.gan.clone().unwrap_or_else(|| GanTrainConfig::for_dof(n));
        gan.validate().map_err(config_err)?;
        if file.dataset.size == 0 {
            return Err(config_err("dataset.size must be >= 1"));
        }
        Ok(Scenario {
            name: file.name,
            task_box: file.task_box.unwrap_or_else(|| TaskBox::around(&chain)),
            chain,
            world,
            constraints,
            ik,
            lbfgs: file.lbfgs,
            nr: file.nr,
            planner: file.planner,
            gan,
            dataset_size: file.dataset.size,
            plan: file.plan,
            coverage: file.coverage,
            files: file.files,
        })
    }

    pub fn scene(&self) -> Scene {
        Scene {
            constraints: self.constraints.clone(),
            ik: self.ik.clone(),
            world: self.world.clone(),
            lbfgs: self.lbfgs,
        }
    }

    pub fn generator_costs(&self) -> GeneratorCosts {
        GeneratorCosts::from_constraints(&self.constraints)
    }
}

fn term_from_spec(spec: &TermSpec, n: usize) -> Result<CostTerm> {
    let term = match spec {
        TermSpec::EePose {
            target,
            weights,
            weight,
            threshold,
        } => CostTerm {
            kind: CostKind::EePose {
                target: *target,
                weights: *weights,
                task: false,
            },
            weight: weight.unwrap_or(DEFAULT_EE_WEIGHT),
            threshold: Some(threshold.unwrap_or(DEFAULT_EE_THRESHOLD)),
        },
        TermSpec::Posture { weights, weight } => {
            let w = weights.clone().unwrap_or_else(|| vec![1.0; n]);
            if w.len() != n {
                return Err(config_err(format!("posture weights need {n} entries")));
            }
            CostTerm {
                kind: CostKind::Posture {
                    nominal: DVector::zeros(n),
                    weights: w,
                },
                weight: weight.unwrap_or(DEFAULT_POSTURE_WEIGHT),
                threshold: None,
            }
        }
        TermSpec::JointLimit { weight, threshold } => CostTerm {
            kind: CostKind::JointLimit,
            weight: weight.unwrap_or(DEFAULT_LIMIT_WEIGHT),
            threshold: Some(threshold.unwrap_or(DEFAULT_LIMIT_THRESHOLD)),
        },
        TermSpec::StaticStability {
            lower,
            upper,
            weight,
            threshold,
        } => CostTerm {
            kind: CostKind::StaticStability {
                lower: *lower,
                upper: *upper,
            },
            weight: weight.unwrap_or(DEFAULT_STABILITY_WEIGHT),
            threshold: Some(threshold.unwrap_or(DEFAULT_STABILITY_THRESHOLD)),
        },
    };
    term.validate().map_err(config_err)?;
    Ok(term)
}
