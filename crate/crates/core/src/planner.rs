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
//! Constrained RRT with goal sampling.
//!
//! Every random sample is projected onto the constraint manifold before the
//! tree is extended toward it, and every interpolated configuration along an
//! extension is projected again, regularized toward the previous node. Goal
//! configurations are computed up front by numerical IK.

use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::costs::{CostBundle, Target};
use crate::error::{Error, Result};
use crate::gan::{dist2, uniform_configuration, GeneratorEnsemble};
use crate::kinematics::{Configuration, PlanarChain, World};
use crate::optim::{project, project_near, solve_ik, LbfgsOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerOptions {
    pub max_iter: usize,
    /// Joint-space extension step, radians (Euclidean norm).
    pub step_size: f64,
    pub goal_count: usize,
    pub goal_tol: f64,
    pub uniform_mix_prob: f64,
    /// Wall-clock budget per plan call in seconds; exceeding it is a failure.
    pub timeout_secs: Option<f64>,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        PlannerOptions {
            max_iter: 2000,
            step_size: 0.1,
            goal_count: 10,
            goal_tol: 1e-3,
            uniform_mix_prob: 0.2,
            timeout_secs: Some(30.0),
        }
    }
}

impl PlannerOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || self.goal_count == 0 || !(self.goal_tol >= 0.0) {
            return Err(Error::InvalidArgument("step_size > 0, goal_count >= 1 and goal_tol >= 0 required".into()));
        }
        if !(0.0..=1.0).contains(&self.uniform_mix_prob) {
            return Err(Error::InvalidArgument("uniform_mix_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Axis-aligned task-space region the learned sampler draws targets from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl TaskBox {
    /// Base plus/minus the total reach.
    pub fn around(chain: &PlanarChain) -> Self {
        let b = chain.base();
        let r = chain.reach();
        TaskBox {
            min: [b.x - r, b.y - r],
            max: [b.x + r, b.y + r],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        [rng.random_range(self.min[0]..self.max[0]), rng.random_range(self.min[1]..self.max[1])]
    }
}

/// Source of configurations for tree growth and IK seeds.
#[derive(Debug, Clone, Copy)]
pub enum Sampler<'a> {
    Uniform,
    Learned {
        ensemble: &'a GeneratorEnsemble,
        task_box: TaskBox,
    },
    /// Uniform with probability `p_uniform`, learned otherwise.
    Mixed {
        ensemble: &'a GeneratorEnsemble,
        task_box: TaskBox,
        p_uniform: f64,
    },
}

impl Sampler<'_> {
    fn learned<R: Rng + ?Sized>(
        ensemble: &GeneratorEnsemble,
        task: Option<[f64; 2]>,
        task_box: &TaskBox,
        rng: &mut R,
    ) -> Result<Configuration> {
        let t = match task {
            Some(t) => t,
            None => task_box.sample(rng),
        };
        ensemble.sample(&t[..ensemble.task_dim()], rng)
    }

    fn draw_impl<R: Rng + ?Sized>(&self, chain: &PlanarChain, task: Option<[f64; 2]>, rng: &mut R) -> Result<Configuration> {
        match *self {
            Sampler::Uniform => Ok(uniform_configuration(chain, rng)),
            Sampler::Learned { ensemble, task_box } => Self::learned(ensemble, task, &task_box, rng),
            Sampler::Mixed {
                ensemble,
                task_box,
                p_uniform,
            } => {
                // p >= 1 consumes exactly the uniform sampler's stream
                if p_uniform >= 1.0 || rng.random::<f64>() < p_uniform {
                    Ok(uniform_configuration(chain, rng))
                } else {
                    Self::learned(ensemble, task, &task_box, rng)
                }
            }
        }
    }

    /// Configuration for tree growth.
    pub fn draw<R: Rng + ?Sized>(&self, chain: &PlanarChain, rng: &mut R) -> Result<Configuration> {
        self.draw_impl(chain, None, rng)
    }

    /// Configuration conditioned on a task position, used to seed IK.
    pub fn draw_for_task<R: Rng + ?Sized>(&self, chain: &PlanarChain, task: [f64; 2], rng: &mut R) -> Result<Configuration> {
        self.draw_impl(chain, Some(task), rng)
    }
}

/// Constraint bundle, IK bundle and obstacles of one planning problem.
#[derive(Debug, Clone)]
pub struct Scene {
    pub constraints: CostBundle,
    /// Constraints plus the end-effector task term.
    pub ik: CostBundle,
    pub world: World,
    pub lbfgs: LbfgsOptions,
}

impl Scene {
    pub fn chain(&self) -> &PlanarChain {
        self.constraints.chain()
    }

    /// Constraint thresholds met and collision-free.
    pub fn is_valid(&self, q: &Configuration) -> Result<bool> {
        Ok(self.constraints.evaluate(q)?.all_below_threshold && !self.chain().in_collision(q, &self.world)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanTree {
    pub nodes: Vec<Configuration>,
    pub parents: Vec<Option<usize>>,
}

impl PlanTree {
    pub fn new(root: Configuration) -> Self {
        PlanTree {
            nodes: vec![root],
            parents: vec![None],
        }
    }

    pub fn add(&mut self, q: Configuration, parent: usize) -> usize {
        self.nodes.push(q);
        self.parents.push(Some(parent));
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanStats {
    /// Projection calls, failed ones included.
    pub projections: usize,
    /// L-BFGS iterations summed over all projection calls.
    pub projection_iterations: usize,
    pub extensions: usize,
    pub iterations: usize,
    pub wall_time: Duration,
}

pub type Path = Vec<Configuration>;

/// Index of the nearest point in Euclidean joint space; ties go to the lowest index.
pub fn nearest_neighbor(points: &[Configuration], q: &Configuration) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, q);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Root-to-node sequence of configurations.
pub fn extract_path(tree: &PlanTree, goal_index: usize) -> Path {
    let mut path = Vec::new();
    let mut cur = Some(goal_index);
    while let Some(i) = cur {
        path.push(tree.nodes[i].clone());
        cur = tree.parents[i];
    }
    path.reverse();
    path
}

/// Goal configurations for `target` from `count` IK runs seeded by the
/// sampler. Successful, collision-free solutions closer than `goal_tol` to
/// an earlier one are dropped.
pub fn sample_goal<R: Rng + ?Sized>(
    scene: &Scene,
    target: &Target,
    count: usize,
    goal_tol: f64,
    sampler: &Sampler<'_>,
    rng: &mut R,
) -> Result<Vec<Configuration>> {
    let chain = scene.chain();
    let t = target.as_slice();
    let task = [t[0], t[1]];
    let mut goals: Vec<Configuration> = Vec::new();
    for _ in 0..count {
        let seed = sampler.draw_for_task(chain, task, rng)?;
        let r = solve_ik(&scene.ik, &seed, target, &scene.lbfgs)?;
        if !r.success() || chain.in_collision(&r.q_final, &scene.world)? {
            continue;
        }
        if goals.iter().all(|g| dist2(g, &r.q_final).sqrt() > goal_tol) {
            goals.push(r.q_final);
        }
    }
    if goals.is_empty() {
        return Err(Error::NoGoalFound);
    }
    Ok(goals)
}

/// Grows the tree from `from` toward an on-manifold `q_target` in steps of
/// at most `step_size`. Stops at the first failed projection, collision,
/// jump longer than twice the step, or step that makes no progress. Returns
/// the index of the last node reached.
pub fn constrained_extend(
    tree: &mut PlanTree,
    from: usize,
    q_target: &Configuration,
    scene: &Scene,
    opts: &PlannerOptions,
    stats: &mut PlanStats,
) -> Result<usize> {
    stats.extensions += 1;
    let step = opts.step_size;
    let mut current = from;
    loop {
        let q_cur = &tree.nodes[current];
        let d = dist2(q_cur, q_target).sqrt();
        if d == 0.0 {
            return Ok(current);
        }
        let seed = if d <= step {
            q_target.clone()
        } else {
            q_cur + (q_target - q_cur) * (step / d)
        };
        stats.projections += 1;
        let r = project_near(&scene.constraints, &seed, q_cur, &scene.lbfgs)?;
        stats.projection_iterations += r.iterations;
        if !r.success() {
            return Ok(current);
        }
        let q_new = r.q_final;
        if dist2(&q_new, q_cur).sqrt() > 2.0 * step
            || dist2(&q_new, q_target).sqrt() >= d
            || scene.chain().in_collision(&q_new, &scene.world)?
        {
            return Ok(current);
        }
        current = tree.add(q_new, current);
    }
}

/// Result of one planning query.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub path: Option<Path>,
    pub stats: PlanStats,
    pub tree: PlanTree,
    pub goals: Vec<Configuration>,
}

/// Constrained RRT toward an end-effector target.
pub fn plan<R: Rng + ?Sized>(
    scene: &Scene,
    q0: &Configuration,
    target: &Target,
    sampler: &Sampler<'_>,
    opts: &PlannerOptions,
    rng: &mut R,
) -> Result<PlanOutcome> {
    opts.validate()?;
    let start = Instant::now();
    let chain = scene.chain();
    chain.check_dim(q0)?;
    if !scene.is_valid(q0)? {
        return Err(Error::InvalidStart("start violates constraints or collides".into()));
    }
    let at_start = scene.ik.with_task_target(target)?.with_nominal(q0).evaluate(q0)?;
    let mut goals = match sample_goal(scene, target, opts.goal_count, opts.goal_tol, sampler, rng) {
        Err(Error::NoGoalFound) if at_start.all_below_threshold => Vec::new(),
        other => other?,
    };
    if at_start.all_below_threshold {
        goals.insert(0, q0.clone());
    }

    let mut stats = PlanStats::default();
    let mut tree = PlanTree::new(q0.clone());
    let finish = |path, mut stats: PlanStats, tree, goals| {
        stats.wall_time = start.elapsed();
        Ok(PlanOutcome {
            path,
            stats,
            tree,
            goals,
        })
    };
    if goals.iter().any(|g| dist2(g, q0).sqrt() <= opts.goal_tol) {
        return finish(Some(vec![q0.clone()]), stats, tree, goals);
    }
    let timeout = opts.timeout_secs.map(Duration::from_secs_f64);

    for _ in 0..opts.max_iter {
        stats.iterations += 1;
        let q_rand = sampler.draw(chain, rng)?;
        stats.projections += 1;
        let r = project(&scene.constraints, &q_rand, &scene.lbfgs)?;
        stats.projection_iterations += r.iterations;
        if r.success() {
            let q_hat = r.q_final;
            let near = nearest_neighbor(&tree.nodes, &q_hat).expect("tree has a root");
            let reached_a = constrained_extend(&mut tree, near, &q_hat, scene, opts, &mut stats)?;
            let k = nearest_neighbor(&goals, &tree.nodes[reached_a]).expect("at least one goal");
            let reached_b = constrained_extend(&mut tree, reached_a, &goals[k], scene, opts, &mut stats)?;
            if dist2(&tree.nodes[reached_b], &goals[k]).sqrt() <= opts.goal_tol {
                let path = extract_path(&tree, reached_b);
                return finish(Some(path), stats, tree, goals);
            }
        }
        if timeout.is_some_and(|t| start.elapsed() > t) {
            break;
        }
    }
    finish(None, stats, tree, goals)
}

/// Checks that every node is valid and consecutive nodes are at most
/// `max_step` apart. Returns a description of the first violation.
pub fn validate_path(scene: &Scene, path: &[Configuration], max_step: f64) -> Result<std::result::Result<(), String>> {
    if path.is_empty() {
        return Ok(Err("empty path".into()));
    }
    for (i, q) in path.iter().enumerate() {
        if !scene.is_valid(q)? {
            return Ok(Err(format!("node {i} violates constraints or collides")));
        }
    }
    for (i, w) in path.windows(2).enumerate() {
        let d = dist2(&w[0], &w[1]).sqrt();
        if d > max_step {
            return Ok(Err(format!("step {i} has length {d} > {max_step}")));
        }
    }
    Ok(Ok(()))
}
