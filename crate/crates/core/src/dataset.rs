//! Channel datasets: materialization from scene families, mixing at a
//! proportion vector, train/test splitting and the `CHNL` dump format.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;

use crate::binio::{write_atomic, Reader, Writer};
use crate::channel::{generate_channel, ArrayGeometry, ChannelSample, SceneFamily};
use crate::error::{Error, Result};
use crate::rng;

pub const MAGIC: [u8; 4] = *b"CHNL";
pub const VERSION: u32 = 1;
pub const MIXED_LABEL: &str = "mixed";

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDataset {
    samples: Vec<ChannelSample>,
    n_antennas: usize,
    n_users: usize,
}

impl ChannelDataset {
    pub fn new(samples: Vec<ChannelSample>, n_antennas: usize, n_users: usize) -> Result<Self> {
        if n_antennas == 0 || n_users == 0 {
            return Err(Error::invalid("dataset needs n_antennas >= 1 and n_users >= 1"));
        }
        for s in &samples {
            if s.h.len() != n_antennas {
                return Err(Error::AntennaMismatch { expected: n_antennas, found: s.h.len() });
            }
            if s.h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::NonFinite(format!("channel seed {}", s.seed_index)));
            }
        }
        Ok(Self { samples, n_antennas, n_users })
    }

    /// `n` consecutive draws with seeds `base_seed, base_seed + 1, ...`.
    pub fn materialize(scene: &SceneFamily, geometry: &ArrayGeometry, n: usize, base_seed: u64) -> Result<Self> {
        let samples = (0..n as u64)
            .map(|i| generate_channel(scene, geometry, base_seed.wrapping_add(i)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, geometry.n_antennas, 1)
    }

    pub fn samples(&self) -> &[ChannelSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    /// The common scene id, or `"mixed"` when samples come from several scenes.
    pub fn scene_label(&self) -> &str {
        match self.samples.split_first() {
            None => "",
            Some((first, rest)) if rest.iter().all(|s| s.scene_id == first.scene_id) => &first.scene_id,
            Some(_) => MIXED_LABEL,
        }
    }

    /// Count of samples per scene id, in order of first appearance.
    pub fn scene_counts(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for s in &self.samples {
            match out.iter_mut().find(|(id, _)| *id == s.scene_id) {
                Some((_, c)) => *c += 1,
                None => out.push((s.scene_id.clone(), 1)),
            }
        }
        out
    }

    pub fn channels(&self) -> impl Iterator<Item = &[Complex64]> {
        self.samples.iter().map(|s| s.h.as_slice())
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            n_antennas: self.n_antennas,
            n_users: self.n_users,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    pub proportions: Vec<f64>,
    pub total_n: usize,
}

impl MixSpec {
    pub fn new(proportions: Vec<f64>, total_n: usize) -> Result<Self> {
        let spec = Self { proportions, total_n };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.proportions.is_empty() {
            return Err(Error::invalid("mixture needs at least one proportion"));
        }
        if self.total_n == 0 {
            return Err(Error::invalid("mixture total_n must be positive"));
        }
        if self.proportions.iter().any(|q| !q.is_finite() || *q < 0.0) {
            return Err(Error::invalid(format!("proportions must be finite and non-negative: {:?}", self.proportions)));
        }
        let sum: f64 = self.proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("proportions sum to {sum}, expected 1")));
        }
        Ok(())
    }

    pub fn counts(&self) -> Vec<usize> {
        largest_remainder_counts(&self.proportions, self.total_n)
    }
}

/// Hamilton apportionment of `total` across `weights`. Remainders that agree
/// to 1e-9 are treated as ties and resolved toward the lower index.
pub fn largest_remainder_counts(weights: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|q| q * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor().max(0.0) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    let key = |i: usize| ((exact[i] - exact[i].floor()) * 1e9).round() as i64;
    order.sort_by(|&a, &b| key(b).cmp(&key(a)).then(a.cmp(&b)));
    let leftover = total.saturating_sub(assigned);
    for &i in order.iter().cycle().take(leftover) {
        counts[i] += 1;
    }
    counts
}

/// Draws `round(n q_k)` samples without replacement from each source and
/// shuffles the union. Each source has its own RNG stream, so the selection
/// from source `k` does not depend on how many other sources there are.
pub fn mix_datasets(sources: &[ChannelDataset], spec: &MixSpec, rng_seed: u64) -> Result<ChannelDataset> {
    spec.validate()?;
    if sources.len() != spec.proportions.len() {
        return Err(Error::invalid(format!("{} sources but {} proportions", sources.len(), spec.proportions.len())));
    }
    let n_antennas = sources[0].n_antennas;
    let n_users = sources[0].n_users;
    for s in sources {
        if s.n_antennas != n_antennas {
            return Err(Error::AntennaMismatch { expected: n_antennas, found: s.n_antennas });
        }
    }
    let counts = spec.counts();
    let mut samples = Vec::with_capacity(spec.total_n);
    for (k, (source, &count)) in sources.iter().zip(&counts).enumerate() {
        if source.len() < count {
            return Err(Error::InsufficientSamples { source_index: k, available: source.len(), required: count });
        }
        let mut idx: Vec<usize> = (0..source.len()).collect();
        let mut rng = rng::seeded(rng::derive(rng_seed, &format!("mix-source-{k}")));
        idx.shuffle(&mut rng);
        samples.extend(idx[..count].iter().map(|&i| source.samples[i].clone()));
    }
    let mut rng = rng::seeded(rng::derive(rng_seed, "mix-order"));
    samples.shuffle(&mut rng);
    Ok(ChannelDataset { samples, n_antennas, n_users })
}

/// Random disjoint partition. The training part gets `floor(n * fraction)`
/// samples, clamped so that both parts are non-empty.
pub fn split(dataset: &ChannelDataset, train_fraction: f64, rng_seed: u64) -> Result<(ChannelDataset, ChannelDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(Error::invalid(format!("cannot split a dataset of {n} samples")));
    }
    let n_train = ((n as f64 * train_fraction).floor() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(rng::derive(rng_seed, "split")));
    Ok((dataset.subset(&idx[..n_train]), dataset.subset(&idx[n_train..])))
}

pub fn encode_dataset(dataset: &ChannelDataset) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(&MAGIC);
    w.u32(VERSION);
    w.u64(dataset.len() as u64);
    w.u32(u32::try_from(dataset.n_antennas).map_err(|_| Error::invalid("too many antennas"))?);
    w.u32(u32::try_from(dataset.n_users).map_err(|_| Error::invalid("too many users"))?);
    for s in &dataset.samples {
        w.str16(&s.scene_id)?;
        w.u64(s.seed_index);
        for z in &s.h {
            w.f64(z.re);
            w.f64(z.im);
        }
    }
    Ok(w.buf)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<ChannelDataset> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let n = r.u64("n_samples")?;
    let n_antennas = r.u32("n_antennas")? as usize;
    let n_users = r.u32("n_users")? as usize;
    if n_antennas == 0 || n_users == 0 {
        return Err(Error::Malformed("zero antennas or users".into()));
    }
    let mut samples = Vec::new();
    for i in 0..n {
        let scene_id = r.str16(&format!("sample {i} scene id"))?;
        let seed_index = r.u64(&format!("sample {i} seed"))?;
        let raw = r.f64s(2 * n_antennas, &format!("sample {i} channel"))?;
        let h = raw.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        samples.push(ChannelSample { h, scene_id, seed_index });
    }
    r.finish()?;
    Ok(ChannelDataset { samples, n_antennas, n_users })
}

pub fn save_dataset(dataset: &ChannelDataset, path: &Path) -> Result<()> {
    write_atomic(path, &encode_dataset(dataset)?)
}

pub fn load_dataset(path: &Path) -> Result<ChannelDataset> {
    decode_dataset(&fs::read(path)?)
}
