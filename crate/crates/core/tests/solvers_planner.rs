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

//! Solver, dataset and planner behaviour checked with post-hoc oracles.

use std::sync::Arc;

use msgan::costs::{CostBundle, CostReport, CostTerm, Target};
use msgan::gan::{generate_dataset, uniform_configuration};
use msgan::kinematics::{Obstacle, PlanarChain, World};
use msgan::optim::{minimize_with, project, solve_ik, LbfgsOptions, Termination};
use msgan::planner::{nearest_neighbor, plan, sample_goal, validate_path, PlannerOptions, Sampler, Scene};
use msgan::rng;
use nalgebra::{dvector, DVector};
use proptest::prelude::*;
use rand::Rng;

fn uniform_chain(n: usize) -> Arc<PlanarChain> {
    Arc::new(PlanarChain::uniform(n, 1.0, 3.0).unwrap())
}

fn rosenbrock(q: &DVector<f64>) -> msgan::Result<CostReport> {
    let (x, y) = (q[0], q[1]);
    let total = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
    let gradient = dvector![-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)];
    Ok(CostReport { raw: vec![total], total, gradient, all_below_threshold: false })
}

#[test]
fn lbfgs_solves_rosenbrock() {
    let opts = LbfgsOptions { max_iters: 500, ..Default::default() };
    let r = minimize_with(rosenbrock, &dvector![-1.2, 1.0], &opts).unwrap();
    assert_eq!(r.termination, Termination::GradTol);
    assert!((r.q_final[0] - 1.0).abs() < 1e-5 && (r.q_final[1] - 1.0).abs() < 1e-5, "{}", r.q_final);
}

#[test]
fn ik_on_three_links_succeeds_for_random_reachable_targets() {
    let chain = uniform_chain(3);
    let bundle = CostBundle::new(chain.clone(), vec![CostTerm::position_task(), CostTerm::joint_limit()]).unwrap();
    let mut successes = 0;
    for seed in 0..100 {
        let mut r = rng::seeded(seed);
        let p = chain.forward_kinematics(&uniform_configuration(&chain, &mut r)).unwrap();
        let target = Target::Position([p.x, p.y]);
        let q0 = uniform_configuration(&chain, &mut r);
        let res = solve_ik(&bundle, &q0, &target, &LbfgsOptions::default()).unwrap();
        if res.success() {
            // re-check against the thresholds from scratch
            let check = bundle.with_task_target(&target).unwrap().evaluate(&res.q_final).unwrap();
            assert!(check.all_below_threshold);
            successes += 1;
        }
    }
    assert!(successes > 0);
}

#[test]
fn projection_is_idempotent() {
    let chain = uniform_chain(4);
    let bundle = CostBundle::new(
        chain.clone(),
        vec![CostTerm::ee_pose([0.0, 0.0, 1.0], [0.0, 0.0, 1.0]), CostTerm::joint_limit(), CostTerm::static_stability(-0.3, 0.3)],
    )
    .unwrap();
    let opts = LbfgsOptions::default();
    let mut r = rng::seeded(7);
    let mut checked = 0;
    for _ in 0..50 {
        let q0 = uniform_configuration(&chain, &mut r);
        let first = project(&bundle, &q0, &opts).unwrap();
        if !first.success() {
            continue;
        }
        let second = project(&bundle, &first.q_final, &opts).unwrap();
        assert_eq!(second.iterations, 0);
        assert!((&second.q_final - &first.q_final).norm() <= 1e-12);
        checked += 1;
    }
    assert!(checked > 10);
}

#[test]
fn dataset_rows_satisfy_constraints_and_avoid_obstacles() {
    let chain = Arc::new(PlanarChain::uniform(2, 1.0, 3.1).unwrap());
    let world = World::new(
        vec![Obstacle::circle([0.6, 0.0], 0.3).unwrap(), Obstacle::circle([0.0, 0.6], 0.3).unwrap()],
        0.0,
    )
    .unwrap();
    let bundle = CostBundle::new(chain.clone(), vec![CostTerm::joint_limit(), CostTerm::static_stability(-0.5, 0.5)]).unwrap();
    let (data, stats) = generate_dataset(&bundle, &world, 300, &LbfgsOptions::default(), &mut rng::seeded(2)).unwrap();
    assert_eq!(data.len(), 300);
    assert!(stats.acceptance_rate() > 0.0 && stats.acceptance_rate() < 1.0);
    for (q, t) in data.configs.iter().zip(&data.tasks) {
        assert!(bundle.evaluate(q).unwrap().all_below_threshold);
        assert!(!chain.in_collision(q, &world).unwrap());
        let p = chain.forward_kinematics(q).unwrap();
        assert_eq!([p.x, p.y], *t);
    }
}

fn free_scene(n: usize) -> Scene {
    let chain = uniform_chain(n);
    let constraints = CostBundle::new(chain.clone(), vec![CostTerm::joint_limit()]).unwrap();
    let ik = constraints.with_term(CostTerm::position_task()).unwrap();
    Scene { constraints, ik, world: World::empty(), lbfgs: LbfgsOptions::default() }
}

#[test]
fn goals_meet_constraints_and_reach_the_target() {
    let scene = free_scene(3);
    let target = Target::Position([1.5, 1.0]);
    let goals = sample_goal(&scene, &target, 10, 1e-3, &Sampler::Uniform, &mut rng::seeded(3)).unwrap();
    let ik = scene.ik.with_task_target(&target).unwrap();
    for g in &goals {
        assert!(ik.evaluate(g).unwrap().all_below_threshold);
    }
}

#[test]
fn two_link_planning_always_succeeds_without_obstacles() {
    let scene = free_scene(2);
    let opts = PlannerOptions { timeout_secs: None, ..Default::default() };
    for seed in 0..50 {
        let mut r = rng::seeded(seed);
        let q0 = uniform_configuration(scene.chain(), &mut r);
        let qg = uniform_configuration(scene.chain(), &mut r);
        let p = scene.chain().forward_kinematics(&qg).unwrap();
        let out = plan(&scene, &q0, &Target::Position([p.x, p.y]), &Sampler::Uniform, &opts, &mut r).unwrap();
        let path = out.path.unwrap_or_else(|| panic!("seed {seed} failed"));
        assert_eq!(path[0], q0);
        assert_eq!(validate_path(&scene, &path, 2.0 * opts.step_size).unwrap(), Ok(()));
        let stats = &out.stats;
        assert!(stats.projections >= stats.extensions);
    }
}

#[test]
fn planning_around_a_wall_yields_valid_paths() {
    let mut scene = free_scene(3);
    scene.world = World::new(vec![Obstacle::aabb([1.2, -0.2], [1.4, 3.0]).unwrap()], 0.0).unwrap();
    let opts = PlannerOptions { timeout_secs: None, ..Default::default() };
    let q0 = dvector![-0.3, 0.2, 0.2];
    let target = Target::Position([0.5, 1.5]);
    let mut found = 0;
    for seed in 0..5 {
        let out = plan(&scene, &q0, &target, &Sampler::Uniform, &opts, &mut rng::seeded(seed)).unwrap();
        for q in &out.tree.nodes {
            assert!(!scene.chain().in_collision(q, &scene.world).unwrap());
        }
        if let Some(path) = out.path {
            assert_eq!(validate_path(&scene, &path, 2.0 * opts.step_size).unwrap(), Ok(()));
            found += 1;
        }
    }
    assert!(found > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn nearest_neighbor_matches_linear_scan(seed in 0u64..1_000_000, dim in 1usize..7) {
        let mut r = rng::seeded(seed);
        let points: Vec<DVector<f64>> = (0..1000)
            .map(|_| DVector::from_fn(dim, |_, _| r.random_range(-1.0..1.0)))
            .collect();
        let q = DVector::from_fn(dim, |_, _| r.random_range(-1.0..1.0));
        let d = |p: &DVector<f64>| (p - &q).norm_squared();
        let mut best = 0;
        for i in 1..points.len() {
            if d(&points[i]) < d(&points[best]) {
                best = i;
            }
        }
        prop_assert_eq!(nearest_neighbor(&points, &q), Some(best));
    }
}
