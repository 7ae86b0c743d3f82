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
//! Conditional GAN over robot configurations.
//!
//! The generator is an ensemble of independent MLPs mapping `[noise, task]`
//! to joint angles through a per-joint scaled `tanh`, so every sample lies
//! within the joint limits. The discriminator sees augmented features
//! `[q, x, y, theta, com_x]` and never the task. Each generator is trained on
//! its own against the shared discriminator, with kinematic costs added to
//! the adversarial loss.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{barrier, CostBundle, CostKind};
use crate::error::{Error, Result};
use crate::kinematics::{Configuration, PlanarChain, World};
use crate::neural::{Activation, Gradients, Mlp, Sgd, SgdOptions};
use crate::optim::{project, LbfgsOptions};
use crate::rng;

/// Valid configurations paired with their end-effector positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub configs: Vec<Configuration>,
    pub tasks: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub attempts: usize,
    pub accepted: usize,
}

impl DatasetStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempts as f64
        }
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn dof(&self) -> usize {
        self.configs.first().map_or(0, |q| q.len())
    }

    /// Comma-separated table with header `q0..q{n-1},x,y`; floats use the
    /// shortest representation that round-trips.
    pub fn to_table(&self) -> String {
        let n = self.dof();
        let mut out = String::new();
        let header: Vec<String> = (0..n).map(|i| format!("q{i}")).chain(["x".into(), "y".into()]).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for (q, t) in self.configs.iter().zip(&self.tasks) {
            let row: Vec<String> = q.iter().chain(t.iter()).map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty dataset file".into()))?;
        let cols = header.split(',').count();
        if cols < 3 {
            return Err(Error::Format("dataset needs at least one joint and x,y columns".into()));
        }
        let n = cols - 2;
        let mut configs = Vec::new();
        let mut tasks = Vec::new();
        for (i, line) in lines.enumerate() {
            let vals = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("row {}: {e}", i + 1)))?;
            if vals.len() != cols {
                return Err(Error::Format(format!("row {} has {} columns, expected {cols}", i + 1, vals.len())));
            }
            configs.push(DVector::from_column_slice(&vals[..n]));
            tasks.push([vals[n], vals[n + 1]]);
        }
        Ok(Dataset { configs, tasks })
    }
}

/// Uniform sample within the chain's joint limits.
pub fn uniform_configuration<R: Rng + ?Sized>(chain: &PlanarChain, rng: &mut R) -> Configuration {
    DVector::from_iterator(
        chain.dof(),
        chain
            .joint_lower()
            .iter()
            .zip(chain.joint_upper())
            .map(|(lo, hi)| rng.random_range(*lo..*hi)),
    )
}

const DATASET_CHUNK: usize = 256;
const PROBE_ATTEMPTS: usize = 1000;

/// Samples uniformly within joint limits, projects onto the constraint
/// manifold and keeps collision-free successes until `n` are accepted.
///
/// Work is split into chunks with their own random streams and merged in
/// chunk order, so the result does not depend on the thread count.
pub fn generate_dataset(
    constraints: &CostBundle,
    world: &World,
    n: usize,
    opts: &LbfgsOptions,
    rng: &mut rng::Rng,
) -> Result<(Dataset, DatasetStats)> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be >= 1".into()));
    }
    let chain = constraints.chain();
    let base = rng.next_u64();
    let run_chunk = |c: u64| -> Result<Vec<Option<Configuration>>> {
        let mut r = rng::stream(base, c);
        (0..DATASET_CHUNK)
            .map(|_| {
                let q = uniform_configuration(chain, &mut r);
                let res = project(constraints, &q, opts)?;
                if res.success() && !chain.in_collision(&res.q_final, world)? {
                    Ok(Some(res.q_final))
                } else {
                    Ok(None)
                }
            })
            .collect()
    };

    let mut configs = Vec::with_capacity(n);
    let mut stats = DatasetStats {
        attempts: 0,
        accepted: 0,
    };
    let mut next_chunk = 0u64;
    let workers = rayon::current_num_threads().max(1) as u64;
    while configs.len() < n {
        let chunks: Vec<u64> = (next_chunk..next_chunk + workers).collect();
        next_chunk += workers;
        let results = chunks.par_iter().map(|&c| run_chunk(c)).collect::<Result<Vec<_>>>()?;
        for q in results.into_iter().flatten() {
            if configs.len() == n {
                break;
            }
            stats.attempts += 1;
            if let Some(q) = q {
                stats.accepted += 1;
                configs.push(q);
            }
        }
        if stats.attempts >= PROBE_ATTEMPTS && stats.acceptance_rate() < 1e-3 {
            return Err(Error::InfeasibleScenario(format!(
                "acceptance rate {:.4}% over {} attempts",
                100.0 * stats.acceptance_rate(),
                stats.attempts
            )));
        }
    }
    let tasks = configs
        .iter()
        .map(|q| chain.forward_kinematics(q).map(|p| [p.x, p.y]))
        .collect::<Result<Vec<_>>>()?;
    Ok((Dataset { configs, tasks }, stats))
}

/// `[q, x, y, theta, com_x]`.
pub fn augment(chain: &PlanarChain, q: &Configuration) -> Result<Vec<f64>> {
    let pose = chain.forward_kinematics(q)?;
    let com = chain.center_of_mass(q)?;
    let mut out = Vec::with_capacity(q.len() + 4);
    out.extend(q.iter());
    out.extend([pose.x, pose.y, pose.theta, com.x]);
    Ok(out)
}

// Chains a gradient with respect to the augmented features back to q.
fn augment_vjp(chain: &PlanarChain, q: &Configuration, upstream: &[f64]) -> Result<DVector<f64>> {
    let n = q.len();
    let jac = chain.jacobian(q)?;
    let com_jac = chain.com_jacobian(q)?;
    let mut g = DVector::from_column_slice(&upstream[..n]);
    for k in 0..n {
        g[k] += jac[(0, k)] * upstream[n]
            + jac[(1, k)] * upstream[n + 1]
            + jac[(2, k)] * upstream[n + 2]
            + com_jac[(0, k)] * upstream[n + 3];
    }
    Ok(g)
}

/// Kinematic costs added to the generator loss.
///
/// `c_ee` combines the task position error with every end-effector pose
/// term of the constraint bundle (e.g. an orientation constraint); `c_s` and
/// `c_l` are the stability and joint-limit barriers.
#[derive(Debug, Clone)]
pub struct GeneratorCosts {
    chain: Arc<PlanarChain>,
    pose_terms: Vec<([f64; 3], [f64; 3])>,
    stability: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostParts {
    pub ee: f64,
    pub stability: f64,
    pub limits: f64,
}

impl GeneratorCosts {
    pub fn from_constraints(constraints: &CostBundle) -> Self {
        let mut pose_terms = Vec::new();
        let mut stability = None;
        for t in constraints.terms() {
            match &t.kind {
                CostKind::EePose {
                    target,
                    weights,
                    task: false,
                } => pose_terms.push((*target, *weights)),
                CostKind::StaticStability { lower, upper } => stability = Some((*lower, *upper)),
                _ => {}
            }
        }
        GeneratorCosts {
            chain: constraints.chain_arc().clone(),
            pose_terms,
            stability,
        }
    }

    pub fn chain(&self) -> &PlanarChain {
        &self.chain
    }

    /// Raw cost values and their gradients with respect to `q`.
    fn evaluate(
        &self,
        q: &Configuration,
        task: &[f64],
    ) -> Result<(CostParts, DVector<f64>, DVector<f64>, DVector<f64>)> {
        let chain = &*self.chain;
        let n = q.len();
        let pose = chain.forward_kinematics(q)?.to_array();
        let jac = chain.jacobian(q)?;
        let mut ee = 0.0;
        let mut g_ee = DVector::zeros(n);
        let mut add_pose = |reference: &[f64], weights: &[f64]| {
            for r in 0..reference.len() {
                let e = pose[r] - reference[r];
                ee += weights[r] * e * e;
                if weights[r] != 0.0 {
                    g_ee.axpy(2.0 * weights[r] * e, &jac.row(r).transpose(), 1.0);
                }
            }
        };
        if !task.is_empty() {
            add_pose(task, &[1.0, 1.0, 1.0][..task.len()]);
        }
        for (target, weights) in &self.pose_terms {
            add_pose(target, weights);
        }
        let (stab, g_s) = match self.stability {
            Some((lo, hi)) => crate::costs::static_stability_cost(chain, q, lo, hi)?,
            None => (0.0, DVector::zeros(n)),
        };
        let (lim, gl) = barrier(q.as_slice(), chain.joint_lower(), chain.joint_upper())?;
        Ok((
            CostParts {
                ee,
                stability: stab,
                limits: lim,
            },
            g_ee,
            g_s,
            DVector::from_vec(gl),
        ))
    }

    /// `c_ee` alone, for evaluating samples against tasks.
    pub fn ee_cost(&self, q: &Configuration, task: &[f64]) -> Result<f64> {
        Ok(self.evaluate(q, task)?.0.ee)
    }
}

/// Affine map applied to task inputs before they reach the networks:
/// `(t - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskScaling {
    pub center: [f64; 2],
    pub scale: f64,
}

impl TaskScaling {
    /// Centered on the base, scaled by the total reach.
    pub fn for_chain(chain: &PlanarChain) -> Self {
        let b = chain.base();
        TaskScaling {
            center: [b.x, b.y],
            scale: chain.reach(),
        }
    }

    fn apply<'a>(&'a self, task: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        task.iter().zip(&self.center).map(|(t, c)| (t - c) / self.scale)
    }
}

/// Ensemble of conditional generators sharing input and output shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorEnsemble {
    nets: Vec<Mlp>,
    noise_dim: usize,
    task_dim: usize,
    task_scaling: TaskScaling,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl GeneratorEnsemble {
    pub fn new<R: Rng + ?Sized>(
        chain: &PlanarChain,
        n_nets: usize,
        noise_dim: usize,
        task_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if n_nets == 0 {
            return Err(Error::InvalidArgument("ensemble needs at least one network".into()));
        }
        if noise_dim + task_dim == 0 {
            return Err(Error::InvalidArgument("generator input is empty".into()));
        }
        let mut sizes = vec![noise_dim + task_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(chain.dof());
        let nets = (0..n_nets)
            .map(|_| Mlp::new(&sizes, Activation::Tanh, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(GeneratorEnsemble {
            nets,
            noise_dim,
            task_dim,
            task_scaling: TaskScaling::for_chain(chain),
            lower: chain.joint_lower().to_vec(),
            upper: chain.joint_upper().to_vec(),
        })
    }

    pub fn from_parts(
        nets: Vec<Mlp>,
        noise_dim: usize,
        task_dim: usize,
        task_scaling: TaskScaling,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let Some(first) = nets.first() else {
            return Err(Error::InvalidArgument("ensemble needs at least one network".into()));
        };
        let dof = first.output_dim();
        if !(task_scaling.scale > 0.0 && task_scaling.scale.is_finite()) {
            return Err(Error::InvalidArgument("task scale must be finite and > 0".into()));
        }
        if lower.len() != dof || upper.len() != dof {
            return Err(Error::dim(dof, lower.len()));
        }
        for net in &nets {
            if net.input_dim() != noise_dim + task_dim || net.output_dim() != dof {
                return Err(Error::InvalidArgument("ensemble networks disagree on shapes".into()));
            }
            if net.activations().last() != Some(&Activation::Tanh) {
                return Err(Error::InvalidArgument("generator output must be tanh".into()));
            }
        }
        Ok(GeneratorEnsemble {
            nets,
            noise_dim,
            task_dim,
            task_scaling,
            lower,
            upper,
        })
    }

    pub fn nets(&self) -> &[Mlp] {
        &self.nets
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn task_dim(&self) -> usize {
        self.task_dim
    }

    pub fn dof(&self) -> usize {
        self.lower.len()
    }

    pub fn task_scaling(&self) -> TaskScaling {
        self.task_scaling
    }

    /// Keeps only the networks at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let nets = indices
            .iter()
            .map(|&i| {
                self.nets
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("no network {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        GeneratorEnsemble::from_parts(
            nets,
            self.noise_dim,
            self.task_dim,
            self.task_scaling,
            self.lower.clone(),
            self.upper.clone(),
        )
    }

    fn scale_output(&self, u: &[f64]) -> Configuration {
        DVector::from_iterator(
            u.len(),
            u.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(u, (lo, hi))| (0.5 * (lo + hi) + 0.5 * (hi - lo) * u).clamp(*lo, *hi)),
        )
    }

    fn half_range(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(lo, hi)| 0.5 * (hi - lo)).collect()
    }

    fn check_task(&self, task: &[f64]) -> Result<()> {
        if task.len() != self.task_dim {
            return Err(Error::dim(self.task_dim, task.len()));
        }
        Ok(())
    }

    /// Output of network `index` for explicit noise and task.
    pub fn generate(&self, index: usize, noise: &[f64], task: &[f64]) -> Result<Configuration> {
        self.check_task(task)?;
        if noise.len() != self.noise_dim {
            return Err(Error::dim(self.noise_dim, noise.len()));
        }
        let net = self
            .nets
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("no network {index}")))?;
        let input: Vec<f64> = noise.iter().copied().chain(self.task_scaling.apply(task)).collect();
        Ok(self.scale_output(&net.forward(&input)?))
    }

    /// Draws `z ~ N(0, I)`, picks a network uniformly and returns its output.
    pub fn sample<R: Rng + ?Sized>(&self, task: &[f64], rng: &mut R) -> Result<Configuration> {
        self.check_task(task)?;
        let noise = gaussian(self.noise_dim, rng);
        let index = rng.random_range(0..self.nets.len());
        self.generate(index, &noise, task)
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, tasks: &[Vec<f64>], rng: &mut R) -> Result<Vec<Configuration>> {
        tasks.iter().map(|t| self.sample(t, rng)).collect()
    }

    /// Writes `manifest.toml` plus one `net_<i>.msmlp` model file per network.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            n_nets: self.nets.len(),
            noise_dim: self.noise_dim,
            task_dim: self.task_dim,
            task_scaling: self.task_scaling,
            dof: self.dof(),
            joint_lower: self.lower.clone(),
            joint_upper: self.upper.clone(),
            files: (0..self.nets.len()).map(|i| format!("net_{i}.msmlp")).collect(),
        };
        for (net, file) in self.nets.iter().zip(&manifest.files) {
            fs::write(dir.join(file), net.to_bytes())?;
        }
        let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(dir.join("manifest.toml"), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.toml"))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        if manifest.files.len() != manifest.n_nets {
            return Err(Error::Format("manifest lists the wrong number of networks".into()));
        }
        let nets = manifest
            .files
            .iter()
            .map(|f| Mlp::from_bytes(&fs::read(dir.join(f))?))
            .collect::<Result<Vec<_>>>()?;
        let ens = GeneratorEnsemble::from_parts(
            nets,
            manifest.noise_dim,
            manifest.task_dim,
            manifest.task_scaling,
            manifest.joint_lower,
            manifest.joint_upper,
        )
        .map_err(|e| Error::Format(e.to_string()))?;
        if ens.dof() != manifest.dof {
            return Err(Error::Format("manifest dof disagrees with networks".into()));
        }
        Ok(ens)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    n_nets: usize,
    noise_dim: usize,
    task_dim: usize,
    task_scaling: TaskScaling,
    dof: usize,
    joint_lower: Vec<f64>,
    joint_upper: Vec<f64>,
    files: Vec<String>,
}

fn gaussian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub momentum: f64,
    pub w_adv: f64,
    pub w_ee: f64,
    pub w_s: f64,
    pub w_l: f64,
    pub d_steps_per_g_step: usize,
    pub n_nets: usize,
    pub noise_dim: usize,
    /// Condition the generators on the end-effector position.
    pub conditional: bool,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    /// Rescale each generator gradient to at most this Euclidean norm.
    pub grad_clip: Option<f64>,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            epochs: 50,
            batch_size: 64,
            lr_g: 1e-3,
            lr_d: 1e-3,
            momentum: 0.9,
            w_adv: 1.0,
            w_ee: 1.0,
            w_s: 1.0,
            w_l: 1.0,
            d_steps_per_g_step: 1,
            n_nets: 10,
            noise_dim: 4,
            conditional: true,
            gen_hidden: vec![200, 200],
            disc_hidden: vec![20, 20],
            grad_clip: None,
        }
    }
}

impl GanTrainConfig {
    /// Defaults with the discriminator widened to 40 nodes for chains of 8 or more joints.
    pub fn for_dof(dof: usize) -> Self {
        let mut c = GanTrainConfig::default();
        if dof >= 8 {
            c.disc_hidden = vec![40, 40];
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let rates_ok = self.lr_g > 0.0 && self.lr_d > 0.0 && self.lr_g.is_finite() && self.lr_d.is_finite();
        let weights_ok = [self.w_adv, self.w_ee, self.w_s, self.w_l]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0);
        if !rates_ok || !weights_ok {
            return Err(Error::InvalidArgument("learning rates must be > 0 and weights finite, >= 0".into()));
        }
        if self.batch_size == 0 || self.n_nets == 0 {
            return Err(Error::InvalidArgument("batch_size and n_nets must be >= 1".into()));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::InvalidArgument("grad_clip must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn task_dim(&self) -> usize {
        if self.conditional {
            2
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub generator_loss: Vec<f64>,
    pub discriminator_loss: Vec<f64>,
    pub cost_ee: Vec<f64>,
    pub cost_s: Vec<f64>,
    pub cost_l: Vec<f64>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.generator_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generator_loss.is_empty()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("epoch,generator_loss,discriminator_loss,cost_ee,cost_s,cost_l\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{i},{:?},{:?},{:?},{:?},{:?}\n",
                self.generator_loss[i], self.discriminator_loss[i], self.cost_ee[i], self.cost_s[i], self.cost_l[i]
            ));
        }
        out
    }
}

/// A minibatch view: configurations and their tasks.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub configs: &'a [Configuration],
    pub tasks: &'a [[f64; 2]],
}

pub fn new_discriminator<R: Rng + ?Sized>(dof: usize, hidden: &[usize], rng: &mut R) -> Result<Mlp> {
    let mut sizes = vec![dof + 4];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    Mlp::new(&sizes, Activation::Sigmoid, rng)
}

const PROB_EPS: f64 = 1e-12;

fn bce(p: f64, label: f64) -> (f64, f64) {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let loss = -(label * p.ln() + (1.0 - label) * (1.0 - p).ln());
    let dp = -label / p + (1.0 - label) / (1.0 - p);
    (loss, dp)
}

fn generator_input(noise: &[Vec<f64>], tasks: &[Vec<f64>], scaling: &TaskScaling) -> Vec<f64> {
    noise
        .iter()
        .zip(tasks)
        .flat_map(|(z, t)| z.iter().copied().chain(scaling.apply(t)))
        .collect()
}

fn task_slice(task: &[f64; 2], task_dim: usize) -> Vec<f64> {
    task[..task_dim].to_vec()
}

fn ensure_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::TrainingDiverged(format!("{what} became {v}")))
    }
}

/// One discriminator update on real rows (label 1) against generator
/// outputs (label 0). Fake row `j` comes from a uniformly drawn network,
/// with the batch's task `j` and fresh noise.
pub fn discriminator_step<R: Rng + ?Sized>(
    disc: &mut Mlp,
    disc_opt: &mut Sgd,
    ensemble: &GeneratorEnsemble,
    batch: Batch<'_>,
    chain: &PlanarChain,
    rng: &mut R,
) -> Result<f64> {
    let b = batch.configs.len();
    let width = chain.dof() + 4;
    let mut feats = Vec::with_capacity(2 * b * width);
    for q in batch.configs {
        feats.extend(augment(chain, q)?);
    }
    for t in batch.tasks {
        let q = ensemble.sample(&task_slice(t, ensemble.task_dim), rng)?;
        feats.extend(augment(chain, &q)?);
    }
    let trace = disc.forward_batch(&feats, 2 * b)?;
    let mut loss = 0.0;
    let mut upstream = Vec::with_capacity(2 * b);
    let scale = 1.0 / (2 * b) as f64;
    for (j, p) in trace.output().iter().enumerate() {
        let label = if j < b { 1.0 } else { 0.0 };
        let (l, dp) = bce(*p, label);
        loss += l * scale;
        upstream.push(dp * scale);
    }
    ensure_finite("discriminator loss", loss)?;
    let mut grads = Gradients::zeros_like(disc);
    disc.backward_batch(&trace, &upstream, &mut grads)?;
    disc_opt.step(disc, &grads);
    Ok(loss)
}

/// Loss of a single generator on one batch of `(noise, task)` inputs and its
/// parameter gradients. The adversarial term is the non-saturating
/// `-ln D(augment(G(z, t)))`; all terms are averaged over the batch.
pub fn generator_loss(
    net: &Mlp,
    ensemble: &GeneratorEnsemble,
    disc: &Mlp,
    costs: &GeneratorCosts,
    noise: &[Vec<f64>],
    tasks: &[Vec<f64>],
    config: &GanTrainConfig,
) -> Result<(f64, CostParts, Gradients)> {
    let chain = costs.chain();
    let b = noise.len();
    let n = chain.dof();
    let trace = net.forward_batch(&generator_input(noise, tasks, &ensemble.task_scaling), b)?;
    let configs: Vec<Configuration> = trace.output().chunks_exact(n).map(|u| ensemble.scale_output(u)).collect();
    let scale = 1.0 / b as f64;

    let mut loss = 0.0;
    let mut dq_all: Vec<DVector<f64>> = vec![DVector::zeros(n); b];
    if config.w_adv != 0.0 {
        let mut feats = Vec::with_capacity(b * (n + 4));
        for q in &configs {
            feats.extend(augment(chain, q)?);
        }
        let dtrace = disc.forward_batch(&feats, b)?;
        let mut upstream = Vec::with_capacity(b);
        for p in dtrace.output() {
            let (l, dp) = bce(*p, 1.0);
            loss += config.w_adv * l * scale;
            upstream.push(config.w_adv * dp * scale);
        }
        let dfeat = disc.input_gradient_batch(&dtrace, &upstream)?;
        for ((dq, q), df) in dq_all.iter_mut().zip(&configs).zip(dfeat.chunks_exact(n + 4)) {
            *dq += augment_vjp(chain, q, df)?;
        }
    }

    let mut parts = CostParts::default();
    for ((dq, q), t) in dq_all.iter_mut().zip(&configs).zip(tasks) {
        let (p, g_ee, g_s, g_l) = costs.evaluate(q, t)?;
        loss += scale * (config.w_ee * p.ee + config.w_s * p.stability + config.w_l * p.limits);
        dq.axpy(scale * config.w_ee, &g_ee, 1.0);
        dq.axpy(scale * config.w_s, &g_s, 1.0);
        dq.axpy(scale * config.w_l, &g_l, 1.0);
        parts.ee += scale * p.ee;
        parts.stability += scale * p.stability;
        parts.limits += scale * p.limits;
    }

    let half = ensemble.half_range();
    let upstream: Vec<f64> = dq_all
        .iter()
        .flat_map(|dq| dq.iter().zip(&half).map(|(g, h)| g * h).collect::<Vec<_>>())
        .collect();
    let mut grads = Gradients::zeros_like(net);
    net.backward_batch(&trace, &upstream, &mut grads)?;
    ensure_finite("generator loss", loss)?;
    Ok((loss, parts, grads))
}

/// One update of every generator, each against the same discriminator and
/// with its own noise. Returns the per-network losses.
pub fn generator_step<R: Rng + ?Sized>(
    ensemble: &mut GeneratorEnsemble,
    optimizers: &mut [Sgd],
    disc: &Mlp,
    costs: &GeneratorCosts,
    batch: Batch<'_>,
    config: &GanTrainConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, CostParts)> {
    let task_dim = ensemble.task_dim;
    let tasks: Vec<Vec<f64>> = batch.tasks.iter().map(|t| task_slice(t, task_dim)).collect();
    let noises: Vec<Vec<Vec<f64>>> = (0..ensemble.len())
        .map(|_| (0..tasks.len()).map(|_| gaussian(ensemble.noise_dim, rng)).collect())
        .collect();
    let frozen = ensemble.clone();
    let results = ensemble
        .nets
        .par_iter()
        .zip(&noises)
        .map(|(net, noise)| generator_loss(net, &frozen, disc, costs, noise, &tasks, config))
        .collect::<Result<Vec<_>>>()?;
    let mut losses = Vec::with_capacity(results.len());
    let mut parts = CostParts::default();
    let k = results.len() as f64;
    for ((net, opt), (loss, p, mut grads)) in ensemble.nets.iter_mut().zip(optimizers.iter_mut()).zip(results) {
        if !grads.is_finite() {
            return Err(Error::TrainingDiverged("non-finite generator gradient".into()));
        }
        if let Some(clip) = config.grad_clip {
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > clip {
                grads.scale(clip / norm);
            }
        }
        opt.step(net, &grads);
        losses.push(loss);
        parts.ee += p.ee / k;
        parts.stability += p.stability / k;
        parts.limits += p.limits / k;
    }
    Ok((losses, parts))
}

/// Trained networks and their history.
#[derive(Debug, Clone)]
pub struct TrainedGan {
    pub ensemble: GeneratorEnsemble,
    pub discriminator: Mlp,
    pub history: TrainHistory,
}

/// Alternating discriminator / generator updates over shuffled minibatches.
pub fn train(
    dataset: &Dataset,
    costs: &GeneratorCosts,
    config: &GanTrainConfig,
    rng: &mut rng::Rng,
) -> Result<TrainedGan> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let chain = costs.chain();
    if dataset.dof() != chain.dof() {
        return Err(Error::dim(chain.dof(), dataset.dof()));
    }
    let mut ensemble = GeneratorEnsemble::new(
        chain,
        config.n_nets,
        config.noise_dim,
        config.task_dim(),
        &config.gen_hidden,
        rng,
    )?;
    let mut disc = new_discriminator(chain.dof(), &config.disc_hidden, rng)?;
    let g_opts = SgdOptions {
        learning_rate: config.lr_g,
        momentum: config.momentum,
    };
    let mut g_opt = ensemble
        .nets
        .iter()
        .map(|n| Sgd::new(n, g_opts))
        .collect::<Result<Vec<_>>>()?;
    let mut d_opt = Sgd::new(
        &disc,
        SgdOptions {
            learning_rate: config.lr_d,
            momentum: config.momentum,
        },
    )?;

    let mut history = TrainHistory::default();
    let batch_size = config.batch_size.min(dataset.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut configs = Vec::with_capacity(batch_size);
    let mut tasks = Vec::with_capacity(batch_size);
    for _ in 0..config.epochs {
        order.shuffle(rng);
        let (mut g_sum, mut d_sum, mut steps) = (0.0, 0.0, 0usize);
        let mut parts = CostParts::default();
        for idx in order.chunks_exact(batch_size) {
            configs.clear();
            tasks.clear();
            configs.extend(idx.iter().map(|&i| dataset.configs[i].clone()));
            tasks.extend(idx.iter().map(|&i| dataset.tasks[i]));
            let batch = Batch {
                configs: &configs,
                tasks: &tasks,
            };
            if config.w_adv != 0.0 {
                for _ in 0..config.d_steps_per_g_step {
                    d_sum += discriminator_step(&mut disc, &mut d_opt, &ensemble, batch, chain, rng)?;
                }
            }
            let (losses, p) = generator_step(&mut ensemble, &mut g_opt, &disc, costs, batch, config, rng)?;
            g_sum += losses.iter().sum::<f64>() / losses.len() as f64;
            parts.ee += p.ee;
            parts.stability += p.stability;
            parts.limits += p.limits;
            steps += 1;
        }
        let s = steps.max(1) as f64;
        let d_steps = (steps * config.d_steps_per_g_step).max(1) as f64;
        history.generator_loss.push(g_sum / s);
        history.discriminator_loss.push(d_sum / d_steps);
        history.cost_ee.push(parts.ee / s);
        history.cost_s.push(parts.stability / s);
        history.cost_l.push(parts.limits / s);
    }
    Ok(TrainedGan {
        ensemble,
        discriminator: disc,
        history,
    })
}

/// Fraction of dataset configurations with at least one sample within
/// Euclidean distance `epsilon` in joint space.
pub fn coverage(samples: &[Configuration], dataset: &[Configuration], epsilon: f64) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let eps2 = epsilon * epsilon;
    let covered = dataset
        .par_iter()
        .filter(|d| samples.iter().any(|s| dist2(s, d) <= eps2))
        .count();
    covered as f64 / dataset.len() as f64
}

pub(crate) fn dist2(a: &Configuration, b: &Configuration) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Number of connected components of the graph linking points closer than `radius`.
pub fn count_modes(points: &[Configuration], radius: f64) -> usize {
    let mut parent: Vec<usize> = (0..points.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let r2 = radius * radius;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if dist2(&points[i], &points[j]) <= r2 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }
    (0..points.len()).filter(|&i| find(&mut parent, i) == i).count()
}

fn nearest(points: &[Configuration], q: &Configuration) -> (usize, f64) {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, dist2(p, q)))
        .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
}

/// Lloyd's k-means with k-means++ seeding. Returns centroids and labels.
pub fn kmeans<R: Rng + ?Sized>(
    points: &[Configuration],
    k: usize,
    iters: usize,
    rng: &mut R,
) -> Result<(Vec<Configuration>, Vec<usize>)> {
    if k == 0 || points.len() < k {
        return Err(Error::InvalidArgument(format!("cannot form {k} clusters from {} points", points.len())));
    }
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(&centroids, p).1).collect();
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            d.iter()
                .position(|w| {
                    r -= w;
                    r < 0.0
                })
                .unwrap_or(points.len() - 1)
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].clone());
    }
    let mut labels = vec![0; points.len()];
    for _ in 0..iters {
        let new_labels: Vec<usize> = points.iter().map(|p| nearest(&centroids, p).0).collect();
        let changed = new_labels != labels;
        labels = new_labels;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Configuration> =
                points.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(p, _)| p).collect();
            if !members.is_empty() {
                let mut sum = DVector::zeros(centroid.len());
                for m in &members {
                    sum += *m;
                }
                *centroid = sum / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    Ok((centroids, labels))
}

/// Number of distinct dataset clusters reached by samples lying within
/// `epsilon` of some dataset point; far-off samples are ignored.
pub fn occupied_clusters(samples: &[Configuration], dataset: &[Configuration], labels: &[usize], epsilon: f64) -> usize {
    let mut seen = std::collections::BTreeSet::new();
    for s in samples {
        let (i, d2) = nearest(dataset, s);
        if d2 <= epsilon * epsilon {
            seen.insert(labels[i]);
        }
    }
    seen.len()
}
