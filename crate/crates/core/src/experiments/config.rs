use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::beamnet::{NetConfig, Schedule};
use crate::channel::{ArrayGeometry, SceneFamily};
use crate::error::{Error, Result};

/// Network shape and regularization. Antenna count comes from `array`, and
/// power and noise from the SNR settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub n_users: usize,
    pub n_rf_chains: usize,
    pub hidden_widths: Vec<usize>,
    pub dropout_rate: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    pub unit_modulus: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

/// How expected Hessians enter `C(q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curvature {
    /// Eigenvalues replaced by their magnitudes (see [`crate::theory::absolute_curvature`]).
    Absolute,
    /// The finite-difference estimate as is; may be indefinite.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    /// Channels per dataset used for each expected Hessian.
    pub n_samples: usize,
    pub fd_step: f64,
    pub curvature: Curvature,
    /// First-family proportion of the model at which all Hessians are taken.
    pub reference_q: f64,
    /// First-family proportion of the test mixture.
    pub test_q: f64,
    /// Sample counts for the scaling-law fit, trained at `reference_q`.
    pub scaling_n: Vec<usize>,
}

/// Everything an experiment needs. On disk this is TOML written as flat
/// dotted keys, e.g. `scene.family_A.azimuth_center_rad = 0.0`; keys that are
/// absent keep their [`Default`] values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scene families by id.
    pub scene: BTreeMap<String, SceneFamily>,
    /// The two families that mixtures are built from; `q` is the proportion
    /// of the first.
    pub families: Vec<String>,
    pub array: ArrayGeometry,
    pub net: NetSection,
    pub train: TrainSection,
    pub theory: TheorySection,
    pub snr_grid_db: Vec<f64>,
    /// SNR used for training, the sweep and the theory curve.
    pub reference_snr_db: f64,
    pub pnr_db: f64,
    pub q_grid: Vec<f64>,
    /// Training samples per run.
    pub n_total: usize,
    /// Held-out samples per family (and in the mixed test set).
    pub n_test: usize,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        let scene = [SceneFamily::family_a(), SceneFamily::family_b()].into_iter().map(|s| (s.id.clone(), s)).collect();
        Self {
            scene,
            families: vec!["family_A".into(), "family_B".into()],
            array: ArrayGeometry::ula(net.n_antennas).expect("default geometry"),
            net: NetSection {
                n_users: net.n_users,
                n_rf_chains: net.n_rf_chains,
                hidden_widths: net.hidden_widths,
                dropout_rate: net.dropout_rate,
                bn_epsilon: net.bn_epsilon,
                bn_momentum: net.bn_momentum,
                unit_modulus: net.unit_modulus,
            },
            train: TrainSection { epochs: 2000, batch_size: 32, learning_rate: 1e-3 },
            theory: TheorySection {
                n_samples: 100,
                fd_step: 1e-4,
                curvature: Curvature::Absolute,
                reference_q: 0.5,
                test_q: 0.5,
                scaling_n: vec![250, 500, 1000],
            },
            snr_grid_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
            reference_snr_db: 10.0,
            pnr_db: 20.0,
            q_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            n_total: 1000,
            n_test: 400,
            seeds: vec![0],
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text layered over the defaults and validates the result.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_layers(&[text])
    }

    /// Like [`Self::from_toml_str`] with several documents merged in order, so
    /// that a later layer may set keys an earlier one already set.
    pub fn from_toml_layers(layers: &[&str]) -> Result<Self> {
        let mut table = toml::Table::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        for text in layers {
            let over: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
            merge(&mut table, over);
        }
        let mut config: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (key, family) in &mut config.scene {
            if family.id.is_empty() {
                family.id = key.clone();
            } else if family.id != *key {
                return Err(Error::Config(format!("scene.{key}.id is {:?}", family.id)));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// The configuration as flat dotted-key TOML, one key per line.
    pub fn to_toml_string(&self) -> Result<String> {
        let table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = String::new();
        flatten(&mut out, "", &table);
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.snr_grid_db.is_empty() {
            return bad("snr_grid_db is empty".into());
        }
        if self.snr_grid_db.iter().chain([&self.reference_snr_db, &self.pnr_db]).any(|v| !v.is_finite()) {
            return bad("SNR and PNR values must be finite".into());
        }
        if self.q_grid.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return bad("q_grid values must lie in [0, 1]".into());
        }
        for q in [self.theory.reference_q, self.theory.test_q] {
            if !(0.0..=1.0).contains(&q) {
                return bad(format!("theory proportion {q} outside [0, 1]"));
            }
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.families.len() != 2 {
            return bad(format!("families must name exactly two scenes, got {}", self.families.len()));
        }
        if self.families[0] == self.families[1] {
            return bad("the two families must differ".into());
        }
        for id in &self.families {
            if !self.scene.contains_key(id) {
                return bad(format!("family {id:?} has no scene.{id} section"));
            }
        }
        for family in self.scene.values() {
            family.validate()?;
        }
        self.array.validate()?;
        if self.net.n_users != 1 {
            return bad("experiments evaluate single-user links (net.n_users = 1)".into());
        }
        if self.n_total < 2 || self.n_test == 0 {
            return bad("n_total must be at least 2 and n_test positive".into());
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 || !(self.train.learning_rate > 0.0) {
            return bad("training schedule needs positive epochs, batch size and learning rate".into());
        }
        if self.theory.n_samples == 0 || !(self.theory.fd_step > 0.0) {
            return bad("theory needs positive n_samples and fd_step".into());
        }
        if self.theory.n_samples > self.n_test.min(self.n_total) {
            return bad("theory.n_samples exceeds the available samples".into());
        }
        if let Some(n) = self.theory.scaling_n.iter().find(|&&n| n < 2 || n > self.n_total) {
            return bad(format!("scaling sample count {n} not in 2..=n_total"));
        }
        self.net_config(self.reference_snr_db).validate()
    }

    /// Network configuration at the given SNR with `P = 1`.
    pub fn net_config(&self, snr_db: f64) -> NetConfig {
        NetConfig {
            n_antennas: self.array.n_antennas,
            n_users: self.net.n_users,
            n_rf_chains: self.net.n_rf_chains,
            hidden_widths: self.net.hidden_widths.clone(),
            dropout_rate: self.net.dropout_rate,
            bn_epsilon: self.net.bn_epsilon,
            bn_momentum: self.net.bn_momentum,
            power_p: 1.0,
            noise_var: 1.0,
            unit_modulus: self.net.unit_modulus,
        }
        .with_snr_db(snr_db)
    }

    pub fn schedule(&self, seed: u64) -> Schedule {
        Schedule {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            seed,
        }
    }

    pub fn family(&self, id: &str) -> Result<&SceneFamily> {
        self.scene.get(id).ok_or_else(|| Error::Config(format!("unknown scene family {id:?}")))
    }
}

fn flatten(out: &mut String, prefix: &str, table: &toml::Table) {
    for (key, value) in table {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match value {
            toml::Value::Table(t) => flatten(out, &path, t),
            v => out.push_str(&format!("{path} = {v}\n")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn dotted_keys_override_single_fields() {
        let c =
            ExperimentConfig::from_toml_str("scene.family_B.azimuth_center_rad = -1.0\ntrain.epochs = 5\n").unwrap();
        assert_eq!(c.scene["family_B"].azimuth_center_rad, -1.0);
        assert_eq!(c.scene["family_B"].azimuth_spread_rad, 0.3);
        assert_eq!(c.train.epochs, 5);
        let raw = ExperimentConfig::from_toml_str("theory.curvature = \"raw\"").unwrap();
        assert_eq!(raw.theory.curvature, Curvature::Raw);
    }

    #[test]
    fn later_layers_override_earlier_ones() {
        let c = ExperimentConfig::from_toml_layers(&["train.epochs = 5\npnr_db = 3.0", "train.epochs = 7"]).unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.pnr_db, 3.0);
        assert!(ExperimentConfig::from_toml_layers(&["train.epochs = 5", "train.epochs = -1"]).is_err());
    }

    #[test]
    fn flat_form_round_trips() {
        let c = ExperimentConfig::default();
        let text = c.to_toml_string().unwrap();
        assert!(text.lines().any(|l| l == "scene.family_A.azimuth_center_rad = 0.0"));
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "snr_grid_db = []",
            "q_grid = [0.0, 1.5]",
            "seeds = []",
            "families = [\"family_A\", \"family_C\"]",
            "net.hidden_widths = [10, 20]",
            "tran.epochs = 3",
            "scene.family_A.id = \"other\"",
        ] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn snr_sets_noise_with_unit_power() {
        let n = ExperimentConfig::default().net_config(10.0);
        assert_eq!(n.power_p, 1.0);
        assert!((n.noise_var - 0.1).abs() < 1e-15);
    }
}
