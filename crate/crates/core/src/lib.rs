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
//! # msgan
//!
//! Learns the distribution of valid configurations of planar kinematic chains
//! with an ensemble-generator GAN, and uses the learned sampler to seed
//! numerical inverse kinematics, constraint projection and a constrained RRT.
//!
//! The crate is organised bottom-up:
//!
//! - [`kinematics`]: planar chains, forward kinematics, Jacobians, collision.
//! - [`costs`]: quadratic costs and barriers with analytic gradients.
//! - [`optim`]: L-BFGS with per-term threshold stopping, Newton-Raphson IK.
//! - [`neural`]: a small MLP stack with backpropagation and SGD.
//! - [`gan`]: dataset generation, the generator ensemble and its training.
//! - [`planner`]: constrained RRT with goal sampling.
//! - [`scenario`] and [`experiment`]: scenario files and the benchmark suites.

pub mod costs;
pub mod error;
pub mod experiment;
pub mod gan;
pub mod kinematics;
pub mod neural;
pub mod optim;
pub mod planner;
pub mod rng;
pub mod scenario;
pub mod svg;

pub use error::{Error, Result};
pub use kinematics::{Configuration, EePose, Obstacle, PlanarChain, World};
