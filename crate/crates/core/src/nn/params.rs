use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which part of the network a weight array belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Stem,
    Cell,
    Head,
}

impl Group {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Group::Stem => 0,
            Group::Cell => 1,
            Group::Head => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Group::Stem),
            1 => Some(Group::Cell),
            2 => Some(Group::Head),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub group: Group,
}

impl ParamEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>, group: Group) -> Self {
        Self { name: name.into(), shape, values, group }
    }
}

/// Ordered, uniquely named collection of weight arrays.
#[derive(Debug, Clone)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl PartialEq for ParamSet {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl ParamSet {
    pub fn new(entries: Vec<ParamEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        let mut total = 0usize;
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.name.clone(), i).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate parameter {:?}", e.name)));
            }
            let expect: usize = e.shape.iter().product();
            if expect != e.values.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: shape {:?} holds {expect} values, got {}",
                    e.name,
                    e.shape,
                    e.values.len()
                )));
            }
            if e.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{}: non-finite value", e.name)));
            }
            total += expect;
        }
        if total == 0 {
            return Err(Error::InvalidParameter("parameter set is empty".into()));
        }
        Ok(Self { entries, index })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.position(name).map(|i| &self.entries[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub(crate) fn values_mut(&mut self, i: usize) -> &mut Vec<f64> {
        &mut self.entries[i].values
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    /// All values concatenated in entry order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.values.iter().copied()).collect()
    }

    /// Same names, shapes, groups and order.
    pub fn same_structure(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.group == b.group)
    }

    /// Copies the named entries, in the given order.
    pub fn select<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Result<ParamSet> {
        let entries = names
            .into_iter()
            .map(|n| {
                self.get(n)
                    .cloned()
                    .ok_or_else(|| Error::ShapeMismatch(format!("missing parameter {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        ParamSet::new(entries)
    }

    /// Little-endian bytes of every value, for bit-exact comparisons and digests.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.entries
            .iter()
            .flat_map(|e| e.values.iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }
}

/// Which entries a perturbation touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMask {
    #[default]
    All,
    CellsOnly,
}

impl PerturbMask {
    pub fn covers(self, group: Group) -> bool {
        match self {
            PerturbMask::All => true,
            PerturbMask::CellsOnly => group == Group::Cell,
        }
    }
}

/// Standard-normal draw with the same structure as `like`. Every entry is
/// drawn, whatever mask is later applied, so the stream does not depend on it.
pub fn gaussian_direction(like: &ParamSet, rng: &mut impl rand::Rng) -> ParamSet {
    let entries = like
        .entries
        .iter()
        .map(|e| ParamEntry {
            name: e.name.clone(),
            shape: e.shape.clone(),
            values: (0..e.values.len()).map(|_| StandardNormal.sample(rng)).collect(),
            group: e.group,
        })
        .collect();
    ParamSet { entries, index: like.index.clone() }
}

/// Returns `params + sigma * direction` on masked entries; the rest is copied.
pub fn perturb(
    params: &ParamSet,
    sigma: f64,
    direction: &ParamSet,
    mask: PerturbMask,
) -> Result<ParamSet> {
    if !params.same_structure(direction) {
        return Err(Error::ShapeMismatch("perturbation direction does not match parameters".into()));
    }
    if !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma {sigma} is not finite")));
    }
    let mut out = params.clone();
    for (e, d) in out.entries.iter_mut().zip(&direction.entries) {
        if mask.covers(e.group) {
            for (w, g) in e.values.iter_mut().zip(&d.values) {
                *w += sigma * g;
            }
        }
    }
    Ok(out)
}
