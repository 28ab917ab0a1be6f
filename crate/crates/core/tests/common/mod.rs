#![allow(dead_code)]

use flatnas::nn::{block_names, forward, gradients, min_relu_margin, Batch, ParamSet};
use flatnas::searchspace::Op;
use flatnas::seed::rng_from_seed;
use flatnas::{Genotype, SearchSpaceSpec};
use rand::Rng;

/// Random inputs and labels.
pub fn random_batch(rows: usize, input_dim: usize, classes: usize, seed: u64) -> Batch {
    let mut rng = rng_from_seed(seed);
    let inputs = (0..rows * input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    Batch::new(inputs, input_dim, labels).unwrap()
}

/// Largest elementwise relative error between analytic and central
/// finite-difference gradients, or `None` when a ReLU pre-activation sits
/// close enough to zero that the difference quotient would straddle a kink.
pub fn max_fd_error(params: &ParamSet, g: &Genotype, space: &SearchSpaceSpec, batch: &Batch, h: f64) -> Option<f64> {
    if let Some(m) = min_relu_margin(params, g, space, batch).unwrap() {
        if m < 1e-2 {
            return None;
        }
    }
    let analytic = gradients(params, g, space, batch).unwrap();
    let loss_at = |p: &ParamSet| forward(p, g, space, batch).unwrap().loss;
    let mut worst = 0.0f64;
    for (i, entry) in params.entries().iter().enumerate() {
        let a = analytic.grads.iter().find(|(j, _)| *j == i).map(|(_, v)| v.clone());
        for k in 0..entry.values.len() {
            let plus = loss_at(&entries_with(params, i, k, h));
            let minus = loss_at(&entries_with(params, i, k, -h));
            let numeric = (plus - minus) / (2.0 * h);
            let an = a.as_ref().map_or(0.0, |v| v[k]);
            let err = (an - numeric).abs() / an.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    Some(worst)
}

fn entries_with(params: &ParamSet, i: usize, k: usize, delta: f64) -> ParamSet {
    let mut entries = params.entries().to_vec();
    entries[i].values[k] += delta;
    ParamSet::new(entries).unwrap()
}

fn matvec(p: &ParamSet, w: &str, b: &str, x: &[f64]) -> Vec<f64> {
    let (w, b) = (p.get(w).unwrap(), p.get(b).unwrap());
    let cols = w.shape[1];
    (0..w.shape[0])
        .map(|r| b.values[r] + (0..cols).map(|c| w.values[r * cols + c] * x[c]).sum::<f64>())
        .collect()
}

/// Straightforward per-sample logits, looked up by parameter name.
pub fn reference_logits(p: &ParamSet, g: &Genotype, space: &SearchSpaceSpec, batch: &Batch) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for row in 0..batch.len() {
        let x = &batch.inputs()[row * batch.input_dim()..(row + 1) * batch.input_dim()];
        let mut h = matvec(p, "stem.w", "stem.b", x);
        for cell in 0..space.cells_per_network() {
            let mut nodes = vec![vec![0.0; h.len()]; space.node_count()];
            nodes[0] = h.clone();
            for target in 1..space.node_count() {
                for (e, &(src, dst)) in space.edges().iter().enumerate() {
                    if dst != target {
                        continue;
                    }
                    let input = nodes[src].clone();
                    let op = space.op_at(g, e);
                    let names = block_names(cell, e, op);
                    let out: Vec<f64> = match op {
                        Op::Zeroize => vec![0.0; input.len()],
                        Op::Skip => input,
                        Op::Linear => matvec(p, &names[0], &names[1], &input),
                        Op::ReluLinear => matvec(p, &names[0], &names[1], &input).into_iter().map(|v| v.max(0.0)).collect(),
                        Op::Scale => input.iter().map(|v| v * p.get(&names[0]).unwrap().values[0]).collect(),
                    };
                    for (a, v) in nodes[target].iter_mut().zip(out) {
                        *a += v;
                    }
                }
            }
            h = nodes[space.node_count() - 1].clone();
        }
        out.push(matvec(p, "head.w", "head.b", &h));
    }
    out
}

pub fn reference_loss(p: &ParamSet, g: &Genotype, space: &SearchSpaceSpec, batch: &Batch) -> f64 {
    let logits = reference_logits(p, g, space, batch);
    let total: f64 = logits
        .iter()
        .zip(batch.labels())
        .map(|(l, &y)| l.iter().map(|v| v.exp()).sum::<f64>().ln() - l[y])
        .sum();
    total / batch.len() as f64
}
