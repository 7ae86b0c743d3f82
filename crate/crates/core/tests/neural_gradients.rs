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

//! Backpropagation checked against central finite differences on random small nets.

use msgan::neural::{Activation, Mlp};
use proptest::prelude::*;

const H: f64 = 1e-5;

#[derive(Debug, Clone)]
struct Case {
    sizes: Vec<usize>,
    output: Activation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    input: Vec<f64>,
    upstream: Vec<f64>,
}

impl Case {
    fn net(&self) -> Mlp {
        let layers = self.sizes.len() - 1;
        let mut acts = vec![Activation::Relu; layers - 1];
        acts.push(self.output);
        Mlp::from_parameters(self.sizes.clone(), acts, self.weights.clone(), self.biases.clone()).unwrap()
    }

    /// Smallest |pre-activation| over all hidden ReLU units.
    fn kink_distance(&self) -> f64 {
        let mut a = self.input.clone();
        let mut min = f64::INFINITY;
        for l in 0..self.sizes.len() - 2 {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let z: Vec<f64> = (0..n_out)
                .map(|o| self.biases[l][o] + (0..n_in).map(|i| self.weights[l][o * n_in + i] * a[i]).sum::<f64>())
                .collect();
            min = z.iter().fold(min, |m, v| m.min(v.abs()));
            a = z.iter().map(|v| v.max(0.0)).collect();
        }
        min
    }
}

fn case() -> impl Strategy<Value = Case> {
    (prop::collection::vec(1usize..=8, 2..=6), 0usize..4).prop_flat_map(|(sizes, out)| {
        let output = [Activation::Linear, Activation::Relu, Activation::Tanh, Activation::Sigmoid][out];
        let layers = sizes.len() - 1;
        let w = (0..layers)
            .map(|l| prop::collection::vec(-1.0f64..1.0, sizes[l] * sizes[l + 1]))
            .collect::<Vec<_>>();
        let b = (0..layers)
            .map(|l| prop::collection::vec(-0.5f64..0.5, sizes[l + 1]))
            .collect::<Vec<_>>();
        let n_in = sizes[0];
        let n_out = *sizes.last().unwrap();
        (
            Just(sizes),
            Just(output),
            w,
            b,
            prop::collection::vec(-2.0f64..2.0, n_in),
            prop::collection::vec(-1.0f64..1.0, n_out),
        )
            .prop_map(|(sizes, output, weights, biases, input, upstream)| Case {
                sizes,
                output,
                weights,
                biases,
                input,
                upstream,
            })
    })
}

fn loss(net: &Mlp, x: &[f64], up: &[f64]) -> f64 {
    net.forward(x).unwrap().iter().zip(up).map(|(o, u)| o * u).sum()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn backprop_matches_finite_differences(c in case()) {
        prop_assume!(c.kink_distance() >= 1e-3);
        let mut net = c.net();
        // the output ReLU has its own kink
        if c.output == Activation::Relu {
            let out = {
                let mut hidden = c.clone();
                hidden.output = Activation::Linear;
                hidden.net().forward(&c.input).unwrap()
            };
            prop_assume!(out.iter().all(|v| v.abs() >= 1e-3));
        }
        let (grads, input_grad) = net.backward(&c.input, &c.upstream).unwrap();

        let n = net.num_parameters();
        let mut fd = Vec::with_capacity(n);
        for k in 0..n {
            let orig = *net.parameters().nth(k).unwrap();
            *net.parameters_mut().nth(k).unwrap() = orig + H;
            let lp = loss(&net, &c.input, &c.upstream);
            *net.parameters_mut().nth(k).unwrap() = orig - H;
            let lm = loss(&net, &c.input, &c.upstream);
            *net.parameters_mut().nth(k).unwrap() = orig;
            fd.push((lp - lm) / (2.0 * H));
        }
        let analytic: Vec<f64> = grads.iter().copied().collect();
        prop_assert!(rel_err(&analytic, &fd) <= 1e-4, "params rel err {}", rel_err(&analytic, &fd));

        let fd_in: Vec<f64> = (0..c.input.len())
            .map(|i| {
                let (mut xp, mut xm) = (c.input.clone(), c.input.clone());
                xp[i] += H;
                xm[i] -= H;
                (loss(&net, &xp, &c.upstream) - loss(&net, &xm, &c.upstream)) / (2.0 * H)
            })
            .collect();
        prop_assert!(rel_err(&input_grad, &fd_in) <= 1e-4, "input rel err {}", rel_err(&input_grad, &fd_in));
    }

    #[test]
    fn batch_forward_matches_single_rows(c in case(), extra in prop::collection::vec(-2.0f64..2.0, 8)) {
        let net = c.net();
        let n_in = c.sizes[0];
        let second: Vec<f64> = extra.iter().take(n_in).copied().chain(std::iter::repeat(0.0)).take(n_in).collect();
        let mut batch = c.input.clone();
        batch.extend(&second);
        let trace = net.forward_batch(&batch, 2).unwrap();
        let a = net.forward(&c.input).unwrap();
        let b = net.forward(&second).unwrap();
        let joined: Vec<f64> = a.into_iter().chain(b).collect();
        prop_assert_eq!(trace.output(), &joined[..]);
    }
}
