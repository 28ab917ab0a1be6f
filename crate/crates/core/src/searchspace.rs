//! Cell search spaces, genotypes, and the genetic operators used by the
//! evolutionary search.
//!
//! A cell is a DAG over `node_count` nodes. Node 0 receives the cell input,
//! every other node sums the outputs of its incoming edge ops, and the last
//! node is the cell output. A genotype picks one op per edge.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on exhaustive enumeration.
pub const ENUMERATION_CAP: u64 = 1 << 16;

/// Candidate operation on a cell edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    /// Constant zero output.
    Zeroize,
    /// Identity.
    Skip,
    /// Dense `C x C` map with bias.
    Linear,
    /// Dense map followed by ReLU.
    ReluLinear,
    /// Learned scalar gain.
    Scale,
}

impl Op {
    pub const ALL: [Op; 5] = [Op::Zeroize, Op::Skip, Op::Linear, Op::ReluLinear, Op::Scale];

    pub fn name(self) -> &'static str {
        match self {
            Op::Zeroize => "zeroize",
            Op::Skip => "skip",
            Op::Linear => "linear",
            Op::ReluLinear => "relu_linear",
            Op::Scale => "scale",
        }
    }

    /// Whether the op owns trainable weights.
    pub fn is_parametric(self) -> bool {
        matches!(self, Op::Linear | Op::ReluLinear | Op::Scale)
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Op {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Op::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown op name {s:?}")))
    }
}

/// Cell topology plus the op set shared by every edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpaceSpec {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    ops: Vec<Op>,
    cells_per_network: usize,
    channels: usize,
}

impl SearchSpaceSpec {
    pub fn new(
        node_count: usize,
        edges: Vec<(usize, usize)>,
        ops: Vec<Op>,
        cells_per_network: usize,
        channels: usize,
    ) -> Result<Self> {
        if node_count < 2 {
            return Err(Error::InvalidParameter("node_count must be >= 2".into()));
        }
        if edges.is_empty() {
            return Err(Error::InvalidParameter("a cell needs at least one edge".into()));
        }
        for &(s, t) in &edges {
            if s >= t || t >= node_count {
                return Err(Error::InvalidParameter(format!(
                    "edge ({s}, {t}) is not a forward edge of a {node_count}-node DAG"
                )));
            }
        }
        if ops.is_empty() {
            return Err(Error::InvalidParameter("op set is empty".into()));
        }
        let mut seen = ops.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != ops.len() {
            return Err(Error::InvalidParameter("duplicate op in op set".into()));
        }
        if cells_per_network == 0 || channels == 0 {
            return Err(Error::InvalidParameter(
                "cells_per_network and channels must be >= 1".into(),
            ));
        }
        Ok(Self { node_count, edges, ops, cells_per_network, channels })
    }

    /// 3 nodes, 3 edges, {zeroize, skip, relu_linear}: 27 architectures.
    pub fn micro() -> Self {
        Self::new(
            3,
            vec![(0, 1), (0, 2), (1, 2)],
            vec![Op::Zeroize, Op::Skip, Op::ReluLinear],
            3,
            16,
        )
        .expect("micro preset is valid")
    }

    /// 4 nodes, 6 edges, all five ops: 15625 architectures.
    pub fn nano201() -> Self {
        Self::new(
            4,
            vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
            Op::ALL.to_vec(),
            3,
            16,
        )
        .expect("nano201 preset is valid")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "micro" => Ok(Self::micro()),
            "nano201" => Ok(Self::nano201()),
            other => Err(Error::InvalidParameter(format!("unknown space preset {other:?}"))),
        }
    }

    pub fn with_channels(mut self, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidParameter("channels must be >= 1".into()));
        }
        self.channels = channels;
        Ok(self)
    }

    pub fn with_cells(mut self, cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidParameter("cells_per_network must be >= 1".into()));
        }
        self.cells_per_network = cells;
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn op_names(&self) -> Vec<&'static str> {
        self.ops.iter().map(|op| op.name()).collect()
    }

    pub fn cells_per_network(&self) -> usize {
        self.cells_per_network
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// `|ops|^|edges|`, or `None` on overflow.
    pub fn genotype_count(&self) -> Option<u128> {
        (self.ops.len() as u128).checked_pow(self.edges.len() as u32)
    }

    pub fn validate(&self, g: &Genotype) -> Result<()> {
        if g.0.len() != self.edges.len() {
            return Err(Error::SpaceMismatch(format!(
                "genotype has {} edges, space has {}",
                g.0.len(),
                self.edges.len()
            )));
        }
        if let Some(&bad) = g.0.iter().find(|&&i| i >= self.ops.len()) {
            return Err(Error::SpaceMismatch(format!(
                "op index {bad} out of range for {} ops",
                self.ops.len()
            )));
        }
        Ok(())
    }

    pub fn genotype(&self, op_indices: Vec<usize>) -> Result<Genotype> {
        let g = Genotype(op_indices);
        self.validate(&g)?;
        Ok(g)
    }

    /// Op chosen by `g` on edge `edge`.
    pub fn op_at(&self, g: &Genotype, edge: usize) -> Op {
        self.ops[g.0[edge]]
    }

    /// Every genotype in lexicographic order, subject to [`ENUMERATION_CAP`].
    pub fn enumerate_all(&self) -> Result<Vec<Genotype>> {
        self.enumerate_all_capped(ENUMERATION_CAP)
    }

    pub fn enumerate_all_capped(&self, cap: u64) -> Result<Vec<Genotype>> {
        let count = self.genotype_count().unwrap_or(u128::MAX);
        if count > cap as u128 {
            return Err(Error::EnumerationCapExceeded { count, cap });
        }
        let n_ops = self.ops.len();
        let mut out = Vec::with_capacity(count as usize);
        let mut cur = vec![0usize; self.edges.len()];
        loop {
            out.push(Genotype(cur.clone()));
            // odometer increment, last coordinate fastest
            let mut pos = cur.len();
            loop {
                if pos == 0 {
                    return Ok(out);
                }
                pos -= 1;
                cur[pos] += 1;
                if cur[pos] < n_ops {
                    break;
                }
                cur[pos] = 0;
            }
        }
    }

    /// Uniform draw over the whole space, one independent op per edge.
    pub fn random_genotype(&self, rng: &mut impl rand::Rng) -> Genotype {
        Genotype(
            (0..self.edges.len())
                .map(|_| rng.random_range(0..self.ops.len()))
                .collect(),
        )
    }

    /// Per-edge mutation: with probability `rate` an edge is reassigned a
    /// uniformly drawn op different from its current one.
    pub fn mutate(&self, g: &Genotype, rate: f64, rng: &mut impl rand::Rng) -> Result<Genotype> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidParameter(format!("mutation rate {rate} not in [0, 1]")));
        }
        self.validate(g)?;
        let n_ops = self.ops.len();
        let mut out = g.0.clone();
        for slot in out.iter_mut() {
            let fire = rng.random::<f64>() < rate;
            if fire && n_ops >= 2 {
                let pick = rng.random_range(0..n_ops - 1);
                *slot = if pick >= *slot { pick + 1 } else { pick };
            }
        }
        Ok(Genotype(out))
    }

    /// Uniform crossover: each coordinate comes from `a` or `b` with
    /// probability 1/2.
    pub fn crossover(&self, a: &Genotype, b: &Genotype, rng: &mut impl rand::Rng) -> Result<Genotype> {
        self.validate(a)?;
        self.validate(b)?;
        Ok(Genotype(
            a.0.iter()
                .zip(&b.0)
                .map(|(&x, &y)| if rng.random::<bool>() { x } else { y })
                .collect(),
        ))
    }

    /// `op_name("|" op_name)*`
    pub fn encode(&self, g: &Genotype) -> String {
        g.0.iter()
            .map(|&i| self.ops[i].name())
            .collect::<Vec<_>>()
            .join("|")
    }

    pub fn decode(&self, s: &str) -> Result<Genotype> {
        let parts: Vec<&str> = s.split('|').collect();
        if parts.len() != self.edges.len() {
            return Err(Error::Parse(format!(
                "{s:?} has {} ops, expected {}",
                parts.len(),
                self.edges.len()
            )));
        }
        let indices = parts
            .iter()
            .map(|name| {
                let op: Op = name.parse()?;
                self.ops
                    .iter()
                    .position(|&o| o == op)
                    .ok_or_else(|| Error::Parse(format!("op {name:?} not in this space")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Genotype(indices))
    }

    /// Graphviz `digraph` of one cell.
    pub fn export_dot(&self, g: &Genotype) -> Result<String> {
        self.validate(g)?;
        let mut s = String::from("digraph cell {\n  rankdir=LR;\n");
        for n in 0..self.node_count {
            let _ = writeln!(s, "  {n} [label=\"{n}\"];");
        }
        for (e, &(src, dst)) in self.edges.iter().enumerate() {
            let _ = writeln!(s, "  {src} -> {dst} [label=\"{}\"];", self.op_at(g, e));
        }
        s.push_str("}\n");
        Ok(s)
    }
}

/// One op index per cell edge. Ordering is lexicographic over the indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Genotype(pub(crate) Vec<usize>);

impl Genotype {
    pub fn op_indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Stable hash used for per-genotype seed derivation.
    pub fn stable_hash(&self) -> u64 {
        let bytes: Vec<u8> = self.0.iter().flat_map(|&i| (i as u64).to_le_bytes()).collect();
        crate::seed::stable_hash(&bytes)
    }
}
