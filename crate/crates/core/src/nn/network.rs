//! Forward and backward passes for a stack of identical DAG cells between a
//! dense stem and a dense classification head.
//!
//! ```text
//! x -> stem (dense) -> cell_0 -> ... -> cell_{n-1} -> head (dense) -> logits
//! ```
//!
//! Cells share the genotype but every cell instance owns its weights.

use rand::Rng;

use super::params::{Group, ParamEntry, ParamSet};
use super::Batch;
use crate::error::{Error, Result};
use crate::searchspace::{Genotype, Op, SearchSpaceSpec};

pub const STEM_W: &str = "stem.w";
pub const STEM_B: &str = "stem.b";
pub const HEAD_W: &str = "head.w";
pub const HEAD_B: &str = "head.b";

/// Parameter names owned by one (cell, edge, op) block; empty for
/// parameter-free ops.
pub fn block_names(cell: usize, edge: usize, op: Op) -> Vec<String> {
    let prefix = format!("cell{cell}.e{edge}.{}", op.name());
    match op {
        Op::Linear | Op::ReluLinear => vec![format!("{prefix}.w"), format!("{prefix}.b")],
        Op::Scale => vec![format!("{prefix}.g")],
        Op::Zeroize | Op::Skip => Vec::new(),
    }
}

/// Names required by a genotype, in canonical order: stem, selected cell
/// blocks, head.
pub fn required_names(space: &SearchSpaceSpec, g: &Genotype) -> Vec<String> {
    let mut names = vec![STEM_W.to_string(), STEM_B.to_string()];
    for cell in 0..space.cells_per_network() {
        for edge in 0..space.edge_count() {
            names.extend(block_names(cell, edge, space.op_at(g, edge)));
        }
    }
    names.push(HEAD_W.into());
    names.push(HEAD_B.into());
    names
}

fn glorot(rng: &mut impl Rng, fan_out: usize, fan_in: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)).collect()
}

fn init_block(entries: &mut Vec<ParamEntry>, rng: &mut impl Rng, cell: usize, edge: usize, op: Op, c: usize) {
    let names = block_names(cell, edge, op);
    match op {
        Op::Linear | Op::ReluLinear => {
            entries.push(ParamEntry::new(&names[0], vec![c, c], glorot(rng, c, c), Group::Cell));
            entries.push(ParamEntry::new(&names[1], vec![c], vec![0.0; c], Group::Cell));
        }
        Op::Scale => entries.push(ParamEntry::new(&names[0], vec![1], vec![1.0], Group::Cell)),
        Op::Zeroize | Op::Skip => {}
    }
}

/// Seeded initialization. With `genotype = None` every parametric
/// (cell, edge, op) block is created (supernet layout); otherwise only the
/// blocks the genotype selects. Matrices are Glorot-uniform, biases zero,
/// scalar gains one.
pub fn init_params(
    space: &SearchSpaceSpec,
    genotype: Option<&Genotype>,
    input_dim: usize,
    classes: usize,
    rng: &mut impl Rng,
) -> Result<ParamSet> {
    if input_dim == 0 || classes < 2 {
        return Err(Error::InvalidParameter("input_dim >= 1 and classes >= 2 required".into()));
    }
    if let Some(g) = genotype {
        space.validate(g)?;
    }
    let c = space.channels();
    let mut entries = vec![
        ParamEntry::new(STEM_W, vec![c, input_dim], glorot(rng, c, input_dim), Group::Stem),
        ParamEntry::new(STEM_B, vec![c], vec![0.0; c], Group::Stem),
    ];
    for cell in 0..space.cells_per_network() {
        for edge in 0..space.edge_count() {
            match genotype {
                Some(g) => init_block(&mut entries, rng, cell, edge, space.op_at(g, edge), c),
                None => {
                    for &op in space.ops() {
                        init_block(&mut entries, rng, cell, edge, op, c);
                    }
                }
            }
        }
    }
    entries.push(ParamEntry::new(HEAD_W, vec![classes, c], glorot(rng, classes, c), Group::Head));
    entries.push(ParamEntry::new(HEAD_B, vec![classes], vec![0.0; classes], Group::Head));
    ParamSet::new(entries)
}

#[derive(Debug, Clone, Copy)]
enum EdgeSlot {
    Zero,
    Identity,
    Dense { w: usize, b: usize, relu: bool },
    Gain { g: usize },
}

/// Parameter indices resolved for one (params, genotype) pair.
#[derive(Debug, Clone)]
struct Layout {
    input_dim: usize,
    channels: usize,
    classes: usize,
    stem: (usize, usize),
    head: (usize, usize),
    cells: Vec<Vec<EdgeSlot>>,
}

fn lookup(params: &ParamSet, name: &str, shape: &[usize]) -> Result<usize> {
    let i = params
        .position(name)
        .ok_or_else(|| Error::ShapeMismatch(format!("missing parameter {name:?}")))?;
    let got = &params.entries()[i].shape;
    if got != shape {
        return Err(Error::ShapeMismatch(format!("{name}: expected {shape:?}, found {got:?}")));
    }
    Ok(i)
}

impl Layout {
    fn resolve(params: &ParamSet, space: &SearchSpaceSpec, g: &Genotype) -> Result<Self> {
        space.validate(g)?;
        let stem_shape = &params
            .get(STEM_W)
            .ok_or_else(|| Error::ShapeMismatch("missing parameter \"stem.w\"".into()))?
            .shape;
        if stem_shape.len() != 2 {
            return Err(Error::ShapeMismatch("stem.w must be a matrix".into()));
        }
        let (channels, input_dim) = (stem_shape[0], stem_shape[1]);
        if channels != space.channels() {
            return Err(Error::ShapeMismatch(format!(
                "stem width {channels} does not match space channels {}",
                space.channels()
            )));
        }
        let classes = params
            .get(HEAD_B)
            .ok_or_else(|| Error::ShapeMismatch("missing parameter \"head.b\"".into()))?
            .values
            .len();
        let stem = (lookup(params, STEM_W, &[channels, input_dim])?, lookup(params, STEM_B, &[channels])?);
        let head = (lookup(params, HEAD_W, &[classes, channels])?, lookup(params, HEAD_B, &[classes])?);
        let mut cells = Vec::with_capacity(space.cells_per_network());
        for cell in 0..space.cells_per_network() {
            let mut slots = Vec::with_capacity(space.edge_count());
            for edge in 0..space.edge_count() {
                let op = space.op_at(g, edge);
                let names = block_names(cell, edge, op);
                slots.push(match op {
                    Op::Zeroize => EdgeSlot::Zero,
                    Op::Skip => EdgeSlot::Identity,
                    Op::Linear | Op::ReluLinear => EdgeSlot::Dense {
                        w: lookup(params, &names[0], &[channels, channels])?,
                        b: lookup(params, &names[1], &[channels])?,
                        relu: op == Op::ReluLinear,
                    },
                    Op::Scale => EdgeSlot::Gain { g: lookup(params, &names[0], &[1])? },
                });
            }
            cells.push(slots);
        }
        Ok(Self { input_dim, channels, classes, stem, head, cells })
    }
}

/// `out[b, o] = sum_i x[b, i] * w[o, i] + bias[o]`
fn dense(x: &[f64], rows: usize, w: &[f64], bias: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * n_out);
    for r in 0..rows {
        let xr = &x[r * n_in..(r + 1) * n_in];
        for o in 0..n_out {
            let wo = &w[o * n_in..(o + 1) * n_in];
            let mut acc = bias[o];
            for (a, b) in xr.iter().zip(wo) {
                acc += a * b;
            }
            out.push(acc);
        }
    }
    out
}

/// Accumulates gradients of `out = x w^T + b` given `d_out`.
#[allow(clippy::too_many_arguments)]
fn dense_backward(
    x: &[f64],
    d_out: &[f64],
    rows: usize,
    w: &[f64],
    n_in: usize,
    n_out: usize,
    d_w: &mut [f64],
    d_b: &mut [f64],
    d_x: Option<&mut [f64]>,
) {
    for r in 0..rows {
        let xr = &x[r * n_in..(r + 1) * n_in];
        for o in 0..n_out {
            let g = d_out[r * n_out + o];
            d_b[o] += g;
            let dwo = &mut d_w[o * n_in..(o + 1) * n_in];
            for (dw, xi) in dwo.iter_mut().zip(xr) {
                *dw += g * xi;
            }
        }
    }
    if let Some(d_x) = d_x {
        for r in 0..rows {
            let dxr = &mut d_x[r * n_in..(r + 1) * n_in];
            for o in 0..n_out {
                let g = d_out[r * n_out + o];
                if g == 0.0 {
                    continue;
                }
                let wo = &w[o * n_in..(o + 1) * n_in];
                for (dx, wi) in dxr.iter_mut().zip(wo) {
                    *dx += g * wi;
                }
            }
        }
    }
}

struct CellTrace {
    nodes: Vec<Vec<f64>>,
    /// Pre-activation of each relu_linear edge.
    pre: Vec<Option<Vec<f64>>>,
}

struct Trace {
    cells: Vec<CellTrace>,
    last: Vec<f64>,
    logits: Vec<f64>,
}

/// Outcome of a forward pass: row-major `[batch x classes]` logits and the
/// mean cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub classes: usize,
    pub loss: f64,
}

fn check_batch(layout: &Layout, batch: &Batch) -> Result<()> {
    if batch.input_dim() != layout.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "batch input_dim {} does not match stem input {}",
            batch.input_dim(),
            layout.input_dim
        )));
    }
    if let Some(&bad) = batch.labels().iter().find(|&&l| l >= layout.classes) {
        return Err(Error::ShapeMismatch(format!("label {bad} >= {} classes", layout.classes)));
    }
    Ok(())
}

fn run(params: &ParamSet, layout: &Layout, space: &SearchSpaceSpec, batch: &Batch) -> Trace {
    let e = params.entries();
    let rows = batch.len();
    let c = layout.channels;
    let mut h = dense(
        batch.inputs(),
        rows,
        &e[layout.stem.0].values,
        &e[layout.stem.1].values,
        layout.input_dim,
        c,
    );
    let mut cells = Vec::with_capacity(layout.cells.len());
    for slots in &layout.cells {
        let mut nodes = vec![vec![0.0; rows * c]; space.node_count()];
        nodes[0] = h;
        let mut pre = vec![None; slots.len()];
        // edges with a smaller target are complete before any edge leaves it
        for target in 1..space.node_count() {
            for (edge, &(src, dst)) in space.edges().iter().enumerate() {
                if dst != target {
                    continue;
                }
                let contribution = match slots[edge] {
                    EdgeSlot::Zero => None,
                    EdgeSlot::Identity => Some(nodes[src].clone()),
                    EdgeSlot::Dense { w, b, relu } => {
                        let z = dense(&nodes[src], rows, &e[w].values, &e[b].values, c, c);
                        if relu {
                            let out = z.iter().map(|&v| v.max(0.0)).collect();
                            pre[edge] = Some(z);
                            Some(out)
                        } else {
                            Some(z)
                        }
                    }
                    EdgeSlot::Gain { g } => {
                        let gain = e[g].values[0];
                        Some(nodes[src].iter().map(|v| gain * v).collect())
                    }
                };
                if let Some(v) = contribution {
                    for (acc, x) in nodes[target].iter_mut().zip(&v) {
                        *acc += x;
                    }
                }
            }
        }
        h = nodes[space.node_count() - 1].clone();
        cells.push(CellTrace { nodes, pre });
    }
    let logits = dense(
        &h,
        rows,
        &e[layout.head.0].values,
        &e[layout.head.1].values,
        c,
        layout.classes,
    );
    Trace { cells, last: h, logits }
}

/// Mean cross-entropy and `d loss / d logits`.
fn softmax_xent(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let rows = labels.len();
    let mut grad = vec![0.0; logits.len()];
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits[r * classes..(r + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[label];
        for k in 0..classes {
            let p = (row[k] - log_z).exp();
            grad[r * classes + k] = (p - if k == label { 1.0 } else { 0.0 }) / rows as f64;
        }
    }
    (total / rows as f64, grad)
}

pub fn forward(
    params: &ParamSet,
    genotype: &Genotype,
    space: &SearchSpaceSpec,
    batch: &Batch,
) -> Result<ForwardOutput> {
    let layout = Layout::resolve(params, space, genotype)?;
    check_batch(&layout, batch)?;
    let trace = run(params, &layout, space, batch);
    if trace.logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    let (loss, _) = softmax_xent(&trace.logits, batch.labels(), layout.classes);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(ForwardOutput { logits: trace.logits, classes: layout.classes, loss })
}

/// Gradients of the mean loss for the parameters on the genotype's active
/// path, keyed by entry index in ascending order.
pub struct Gradients {
    pub loss: f64,
    pub grads: Vec<(usize, Vec<f64>)>,
}

impl Gradients {
    pub fn get<'a>(&'a self, params: &ParamSet, name: &str) -> Option<&'a [f64]> {
        let i = params.position(name)?;
        self.grads.iter().find(|(j, _)| *j == i).map(|(_, g)| g.as_slice())
    }
}

pub fn gradients(
    params: &ParamSet,
    genotype: &Genotype,
    space: &SearchSpaceSpec,
    batch: &Batch,
) -> Result<Gradients> {
    let layout = Layout::resolve(params, space, genotype)?;
    check_batch(&layout, batch)?;
    let trace = run(params, &layout, space, batch);
    if trace.logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    let (loss, d_logits) = softmax_xent(&trace.logits, batch.labels(), layout.classes);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }

    let e = params.entries();
    let rows = batch.len();
    let c = layout.channels;
    let zeros = |i: usize| vec![0.0; e[i].values.len()];

    let (hw, hb) = layout.head;
    let (mut d_hw, mut d_hb) = (zeros(hw), zeros(hb));
    let mut d_h = vec![0.0; rows * c];
    dense_backward(
        &trace.last,
        &d_logits,
        rows,
        &e[hw].values,
        c,
        layout.classes,
        &mut d_hw,
        &mut d_hb,
        Some(&mut d_h),
    );
    let mut pending: Vec<(usize, Vec<f64>)> = vec![(hw, d_hw), (hb, d_hb)];

    for (slots, cell) in layout.cells.iter().zip(&trace.cells).rev() {
        let n = space.node_count();
        let mut d_nodes = vec![vec![0.0; rows * c]; n];
        d_nodes[n - 1] = d_h;
        for target in (1..n).rev() {
            for (edge, &(src, dst)) in space.edges().iter().enumerate().rev() {
                if dst != target {
                    continue;
                }
                let (lower, upper) = d_nodes.split_at_mut(target);
                let d_out = &upper[0];
                let d_src = &mut lower[src];
                match slots[edge] {
                    EdgeSlot::Zero => {}
                    EdgeSlot::Identity => {
                        for (a, g) in d_src.iter_mut().zip(d_out) {
                            *a += g;
                        }
                    }
                    EdgeSlot::Dense { w, b, relu } => {
                        let d_z: Vec<f64> = if relu {
                            let z = cell.pre[edge].as_ref().expect("relu edges record pre-activations");
                            d_out.iter().zip(z).map(|(g, &zv)| if zv > 0.0 { *g } else { 0.0 }).collect()
                        } else {
                            d_out.clone()
                        };
                        let mut d_w = zeros(w);
                        let mut d_b = zeros(b);
                        dense_backward(&cell.nodes[src], &d_z, rows, &e[w].values, c, c, &mut d_w, &mut d_b, Some(d_src.as_mut_slice()));
                        pending.push((w, d_w));
                        pending.push((b, d_b));
                    }
                    EdgeSlot::Gain { g } => {
                        let gain = e[g].values[0];
                        let mut d_g = zeros(g);
                        for ((a, go), x) in d_src.iter_mut().zip(d_out).zip(&cell.nodes[src]) {
                            *a += gain * go;
                            d_g[0] += go * x;
                        }
                        pending.push((g, d_g));
                    }
                }
            }
        }
        d_h = std::mem::take(&mut d_nodes[0]);
    }

    let (sw, sb) = layout.stem;
    let (mut d_sw, mut d_sb) = (zeros(sw), zeros(sb));
    dense_backward(batch.inputs(), &d_h, rows, &e[sw].values, layout.input_dim, c, &mut d_sw, &mut d_sb, None);
    pending.push((sw, d_sw));
    pending.push((sb, d_sb));

    pending.sort_by_key(|(i, _)| *i);
    Ok(Gradients { loss, grads: pending })
}

/// Smallest `|pre-activation|` over every relu_linear edge, or `None` if the
/// genotype has no such edge. Used to keep finite-difference checks away
/// from ReLU kinks.
pub fn min_relu_margin(
    params: &ParamSet,
    genotype: &Genotype,
    space: &SearchSpaceSpec,
    batch: &Batch,
) -> Result<Option<f64>> {
    let layout = Layout::resolve(params, space, genotype)?;
    check_batch(&layout, batch)?;
    let trace = run(params, &layout, space, batch);
    Ok(trace
        .cells
        .iter()
        .flat_map(|c| c.pre.iter().flatten())
        .flat_map(|z| z.iter().map(|v| v.abs()))
        .reduce(f64::min))
}
