//! Deterministic synthetic classification datasets with stratified
//! train/validation/test splits.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::seed::{derive_seed, rng_from_seed, short_digest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::UnknownSplit(other.to_string())),
        }
    }
}

/// Everything needed to regenerate a dataset bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Spirals {
        classes: usize,
        per_class: usize,
        noise_std: f64,
        lift_dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Blobs {
        classes: usize,
        per_class: usize,
        spread: f64,
        input_dim: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec::Spirals {
            classes: 3,
            per_class: 300,
            noise_std: 0.15,
            lift_dim: 16,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn generate(&self) -> Result<Dataset> {
        match *self {
            GeneratorSpec::Spirals { classes, per_class, noise_std, lift_dim, seed } => {
                make_spirals(classes, per_class, noise_std, lift_dim, seed)
            }
            GeneratorSpec::Blobs { classes, per_class, spread, input_dim, seed } => {
                make_blobs(classes, per_class, spread, input_dim, seed)
            }
        }
    }

    pub fn with_seed(&self, new_seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            GeneratorSpec::Spirals { seed, .. } | GeneratorSpec::Blobs { seed, .. } => {
                *seed = new_seed
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    input_dim: usize,
    labels: Vec<usize>,
    classes: usize,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
    spec: GeneratorSpec,
}

fn check_common(classes: usize, per_class: usize, dim: usize, dim_min: usize) -> Result<()> {
    if classes < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 classes, got {classes}")));
    }
    if per_class < 3 * classes || per_class < 4 {
        return Err(Error::InvalidParameter(format!(
            "per_class = {per_class} too small for {classes} classes"
        )));
    }
    if dim < dim_min {
        return Err(Error::InvalidParameter(format!("input dimension {dim} < {dim_min}")));
    }
    Ok(())
}

/// `K` interleaved 2-D spirals with Gaussian angular jitter, lifted to
/// `lift_dim` by a seeded random linear projection.
pub fn make_spirals(
    classes: usize,
    per_class: usize,
    noise_std: f64,
    lift_dim: usize,
    seed: u64,
) -> Result<Dataset> {
    check_common(classes, per_class, lift_dim, 2)?;
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise_std {noise_std} must be >= 0")));
    }
    let mut rng = rng_from_seed(derive_seed(seed, "spirals/points"));
    let mut planar = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for k in 0..classes {
        let offset = 2.0 * PI * k as f64 / classes as f64;
        for i in 0..per_class {
            let r = (i + 1) as f64 / per_class as f64;
            let jitter: f64 = StandardNormal.sample(&mut rng);
            let t = offset + 4.0 * r + noise_std * jitter;
            planar.push((r * t.sin(), r * t.cos()));
            labels.push(k);
        }
    }
    let mut prng = rng_from_seed(derive_seed(seed, "spirals/projection"));
    let proj: Vec<f64> = (0..lift_dim * 2).map(|_| StandardNormal.sample(&mut prng)).collect();
    let mut inputs = Vec::with_capacity(planar.len() * lift_dim);
    for &(x, y) in &planar {
        for d in 0..lift_dim {
            inputs.push(proj[2 * d] * x + proj[2 * d + 1] * y);
        }
    }
    let spec = GeneratorSpec::Spirals { classes, per_class, noise_std, lift_dim, seed };
    Ok(Dataset::assemble(inputs, lift_dim, labels, classes, per_class, seed, spec))
}

/// Gaussian clusters around seeded random centers in `[-2, 2]^input_dim`.
pub fn make_blobs(
    classes: usize,
    per_class: usize,
    spread: f64,
    input_dim: usize,
    seed: u64,
) -> Result<Dataset> {
    check_common(classes, per_class, input_dim, 1)?;
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::InvalidParameter(format!("spread {spread} must be > 0")));
    }
    let mut crng = rng_from_seed(derive_seed(seed, "blobs/centers"));
    let centers: Vec<f64> = (0..classes * input_dim)
        .map(|_| rand::Rng::random_range(&mut crng, -2.0..2.0))
        .collect();
    let mut rng = rng_from_seed(derive_seed(seed, "blobs/points"));
    let mut inputs = Vec::with_capacity(classes * per_class * input_dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for k in 0..classes {
        for _ in 0..per_class {
            for d in 0..input_dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                inputs.push(centers[k * input_dim + d] + spread * z);
            }
            labels.push(k);
        }
    }
    let spec = GeneratorSpec::Blobs { classes, per_class, spread, input_dim, seed };
    Ok(Dataset::assemble(inputs, input_dim, labels, classes, per_class, seed, spec))
}

impl Dataset {
    fn assemble(
        inputs: Vec<f64>,
        input_dim: usize,
        labels: Vec<usize>,
        classes: usize,
        per_class: usize,
        seed: u64,
        spec: GeneratorSpec,
    ) -> Self {
        // rounded so every split stays within one sample of 50/25/25
        let quarter = (per_class + 2) / 4;
        let n_train = per_class - 2 * quarter;
        let mut rng = rng_from_seed(derive_seed(seed, "splits"));
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for k in 0..classes {
            let mut idx: Vec<usize> = (k * per_class..(k + 1) * per_class).collect();
            idx.shuffle(&mut rng);
            train.extend_from_slice(&idx[..n_train]);
            val.extend_from_slice(&idx[n_train..n_train + quarter]);
            test.extend_from_slice(&idx[n_train + quarter..]);
        }
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Self { inputs, input_dim, labels, classes, train, val, test, spec }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn split_indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Gathers the given sample indices into one batch.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Batch::new(inputs, self.input_dim, labels).expect("dataset rows are well-formed")
    }

    /// Whole split, in index order.
    pub fn split_batch(&self, split: Split) -> Batch {
        self.gather(self.split_indices(split))
    }

    /// Seeded subset of a split of at most `size` samples, in index order.
    pub fn subset_batch(&self, split: Split, size: usize, seed: u64) -> Batch {
        self.split_batch(split).subset(size, seed)
    }

    /// Mini-batches of one epoch. The shuffle depends only on
    /// `(shuffle_seed, epoch)`; the last batch may be partial.
    pub fn batches(
        &self,
        split: Split,
        batch_size: usize,
        shuffle_seed: u64,
        epoch: usize,
    ) -> Result<impl Iterator<Item = Batch> + '_> {
        if batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        let mut order = self.split_indices(split).to_vec();
        let mut rng = rng_from_seed(derive_seed(shuffle_seed, &format!("epoch/{epoch}")));
        order.shuffle(&mut rng);
        let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
        Ok(chunks.into_iter().map(move |c| self.gather(&c)))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = std::io::BufWriter::new(out);
        let spec = serde_json::to_string(&self.spec).expect("spec serializes");
        writeln!(out, "# generator_spec: {spec}")?;
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.input_dim).map(|d| format!("f{d}")).collect();
        header.push("label".into());
        header.push("split".into());
        w.write_record(&header)?;
        let mut split_of = vec![Split::Train; self.len()];
        for &i in &self.val {
            split_of[i] = Split::Val;
        }
        for &i in &self.test {
            split_of[i] = Split::Test;
        }
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            rec.push(split_of[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self> {
        let mut first = String::new();
        input.read_line(&mut first)?;
        let spec_json = first
            .trim_end()
            .strip_prefix("# generator_spec: ")
            .ok_or_else(|| Error::Parse("missing generator_spec header line".into()))?;
        let spec: GeneratorSpec = serde_json::from_str(spec_json)
            .map_err(|e| Error::Parse(format!("generator_spec: {e}")))?;
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let input_dim = r
            .headers()?
            .len()
            .checked_sub(2)
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::Parse("dataset header too short".into()))?;
        let (mut inputs, mut labels) = (Vec::new(), Vec::new());
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            for d in 0..input_dim {
                let v: f64 = rec[d]
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {i}: bad feature {:?}", &rec[d])))?;
                if !v.is_finite() {
                    return Err(Error::Parse(format!("row {i}: non-finite feature")));
                }
                inputs.push(v);
            }
            labels.push(
                rec[input_dim]
                    .parse::<usize>()
                    .map_err(|_| Error::Parse(format!("row {i}: bad label")))?,
            );
            match rec[input_dim + 1].parse::<Split>()? {
                Split::Train => train.push(i),
                Split::Val => val.push(i),
                Split::Test => test.push(i),
            }
        }
        let classes = match spec {
            GeneratorSpec::Spirals { classes, .. } | GeneratorSpec::Blobs { classes, .. } => classes,
        };
        if labels.iter().any(|&l| l >= classes) {
            return Err(Error::Parse("label out of range".into()));
        }
        Ok(Self { inputs, input_dim, labels, classes, train, val, test, spec })
    }

    /// Digest of the canonical CSV serialization.
    pub fn digest(&self) -> String {
        short_digest(self.to_csv_string().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn spiral_split_sizes() {
        let ds = make_spirals(3, 300, 0.15, 16, 1).unwrap();
        assert_eq!(ds.len(), 900);
        assert_eq!(ds.split_indices(Split::Train).len(), 450);
        assert_eq!(ds.split_indices(Split::Val).len(), 225);
        assert_eq!(ds.split_indices(Split::Test).len(), 225);
        for split in [Split::Train, Split::Val, Split::Test] {
            let mut per = [0usize; 3];
            for &i in ds.split_indices(split) {
                per[ds.labels()[i]] += 1;
            }
            let want = if split == Split::Train { 150 } else { 75 };
            assert_eq!(per, [want; 3], "{split}");
        }
    }

    #[test]
    fn splits_partition() {
        let ds = make_spirals(4, 37, 0.1, 5, 3).unwrap();
        let mut all: Vec<usize> = [Split::Train, Split::Val, Split::Test]
            .iter()
            .flat_map(|&s| ds.split_indices(s).to_vec())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        for split in [Split::Train, Split::Val, Split::Test] {
            let classes: HashSet<usize> =
                ds.split_indices(split).iter().map(|&i| ds.labels()[i]).collect();
            assert_eq!(classes.len(), 4);
        }
    }

    #[test]
    fn noiseless_spirals_disjoint() {
        let ds = make_spirals(2, 100, 0.0, 2, 5).unwrap();
        let key = |i: usize| ds.row(i).iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let a: HashSet<_> = (0..100).map(key).collect();
        let b: HashSet<_> = (100..200).map(key).collect();
        assert!(a.is_disjoint(&b));
    }

    #[test]
    fn regeneration_is_bit_exact() {
        let spec = GeneratorSpec::default();
        assert_eq!(spec.generate().unwrap(), spec.generate().unwrap());
        let b = GeneratorSpec::Blobs { classes: 3, per_class: 20, spread: 0.5, input_dim: 4, seed: 9 };
        assert_eq!(b.generate().unwrap(), b.generate().unwrap());
        assert_ne!(spec.generate().unwrap(), spec.with_seed(1).generate().unwrap());
    }

    #[test]
    fn blobs_balanced() {
        let ds = make_blobs(3, 40, 0.3, 4, 2).unwrap();
        assert_eq!(ds.split_indices(Split::Train).len(), 60);
        assert_eq!(ds.split_indices(Split::Val).len(), 30);
        assert_eq!(ds.split_indices(Split::Test).len(), 30);
    }

    #[test]
    fn invalid_parameters() {
        assert!(make_spirals(1, 100, 0.1, 4, 0).is_err());
        assert!(make_spirals(3, 8, 0.1, 4, 0).is_err());
        assert!(make_spirals(3, 30, -0.1, 4, 0).is_err());
        assert!(make_spirals(3, 30, 0.1, 1, 0).is_err());
        assert!(make_blobs(3, 30, 0.0, 4, 0).is_err());
    }

    #[test]
    fn unknown_split_name() {
        assert!(matches!("holdout".parse::<Split>(), Err(Error::UnknownSplit(_))));
    }

    #[test]
    fn batches_cover_split() {
        let ds = make_spirals(3, 40, 0.1, 4, 0).unwrap();
        let train = ds.split_indices(Split::Train).len();
        let all: Vec<Batch> = ds.batches(Split::Train, 7, 11, 0).unwrap().collect();
        assert_eq!(all.len(), train.div_ceil(7));
        assert_eq!(all.last().unwrap().len(), train % 7);
        let mut got: Vec<usize> = all.iter().flat_map(|b| b.labels().to_vec()).collect();
        let mut want: Vec<usize> =
            ds.split_indices(Split::Train).iter().map(|&i| ds.labels()[i]).collect();
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want);
        let whole: Vec<Batch> = ds.batches(Split::Val, 1000, 11, 0).unwrap().collect();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0].len(), ds.split_indices(Split::Val).len());
        assert!(ds.batches(Split::Val, 0, 1, 0).is_err());
    }

    #[test]
    fn epochs_shuffle_differently_but_replay() {
        let ds = make_spirals(3, 40, 0.1, 4, 0).unwrap();
        let order = |epoch| -> Vec<Vec<f64>> {
            ds.batches(Split::Train, 8, 5, epoch)
                .unwrap()
                .map(|b| b.inputs().to_vec())
                .collect()
        };
        assert_ne!(order(0), order(1));
        assert_eq!(order(1), order(1));
    }

    #[test]
    fn csv_round_trip() {
        let ds = make_spirals(3, 24, 0.15, 5, 8).unwrap();
        let text = ds.to_csv_string();
        let back = Dataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.digest(), ds.digest());
    }

    #[test]
    fn subset_is_seeded_and_bounded() {
        let ds = make_spirals(3, 40, 0.1, 4, 0).unwrap();
        let a = ds.subset_batch(Split::Val, 10, 3);
        assert_eq!(a.len(), 10);
        assert_eq!(a, ds.subset_batch(Split::Val, 10, 3));
        let all = ds.subset_batch(Split::Val, 10_000, 3);
        assert_eq!(all, ds.split_batch(Split::Val));
    }
}
