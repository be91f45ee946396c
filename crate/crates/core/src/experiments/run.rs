use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Curvature, ExperimentConfig};
use crate::baselines::mrt_rate;
use crate::beamnet::{evaluate_rates, train, Batch, NetConfig, NetParams};
use crate::channel::estimate_channel;
use crate::dataset::{mix_datasets, ChannelDataset, MixSpec};
use crate::error::{Error, Result};
use crate::rng;
use crate::theory::{
    absolute_curvature, argmin_with_ties, c_of_q_rational, diagonalize_pair, expected_input_hessian,
    extra_loss_empirical, fit_scaling_law, lambda_matrix, sweep_grid, HessianEstimate, ScalingFit,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Name of the held-out mixture of the two families.
pub const MIXED_TEST: &str = "mixed";

/// Average rate of one model on one test set at one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub model: String,
    pub test_set: String,
    pub snr_db: f64,
    pub rate: f64,
    pub oracle_rate: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub label: String,
    /// Proportion of the first family in the training set; `None` for a
    /// model loaded from outside the session.
    pub q: Option<f64>,
    pub n_train: usize,
    pub counts: Vec<(String, usize)>,
    pub final_train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub q: f64,
    pub model: String,
    /// Mixed-test average rate at the reference SNR.
    pub rate: f64,
    pub oracle_rate: f64,
    /// Mixed-test loss, the negative average rate.
    pub loss: f64,
    /// `loss` minus the smallest loss over the sweep.
    pub extra_loss: f64,
    pub c_direct: Option<f64>,
    pub c_rational: Option<f64>,
    pub log_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianSummary {
    pub dataset_id: String,
    pub n_samples: usize,
    pub trace: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub positive_eigenvalues: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryResult {
    pub reference_model: String,
    pub test_q: f64,
    pub fd_step: f64,
    pub curvature: Curvature,
    /// Summaries of the estimated (unrepaired) Hessians.
    pub hessians: Vec<HessianSummary>,
    pub q: Vec<f64>,
    /// `C(q)` from the Hessians prepared according to `curvature`.
    pub c_direct: Vec<Option<f64>>,
    /// `C(q)` from the estimated Hessians as they are, for comparison.
    pub c_direct_raw: Vec<Option<f64>>,
    pub c_rational: Vec<Option<f64>>,
    /// Ridge added at each point; zero when the mixture Hessian was invertible.
    pub ridges: Vec<f64>,
    pub failures: Vec<(usize, String)>,
    pub argmin_q: Option<f64>,
    pub rational_argmin_q: Option<f64>,
    pub u_shape_violations: Option<usize>,
    /// Falls, then rises, with a single change of direction.
    pub u_shaped: bool,
    /// Eigen-dimensions of the test Hessian left out of the rational form.
    pub excluded_dimensions: Vec<usize>,
    /// `||O_k||_F / ||S_k||_F` per training family.
    pub offdiag_ratio: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub q: f64,
    pub n_values: Vec<usize>,
    pub models: Vec<String>,
    pub test_losses: Vec<f64>,
    /// Loss of the MRT oracle on the same test set, the attainable minimum.
    pub oracle_loss: f64,
    pub extra_losses: Vec<f64>,
    pub fit: Option<ScalingFit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub empirical_argmax_q: f64,
    pub theory_argmin_q: Option<f64>,
    pub failures: Vec<(f64, String)>,
}

/// Everything one experiment reports. Only `wall_clock_s` varies between
/// reruns with the same configuration and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub kind: String,
    pub seed: u64,
    pub families: Vec<String>,
    pub reference_snr_db: f64,
    pub pnr_db: f64,
    pub models: Vec<ModelSummary>,
    pub rates: Vec<RatePoint>,
    pub sweep: Option<SweepResult>,
    pub theory: Option<TheoryResult>,
    pub scaling: Option<ScalingResult>,
    pub wall_clock_s: f64,
}

impl RunResult {
    fn new(kind: &str, session: &Session) -> Self {
        let c = &session.config;
        Self {
            schema_version: SCHEMA_VERSION,
            kind: kind.into(),
            seed: session.seed,
            families: c.families.clone(),
            reference_snr_db: c.reference_snr_db,
            pnr_db: c.pnr_db,
            models: Vec::new(),
            rates: Vec::new(),
            sweep: None,
            theory: None,
            scaling: None,
            wall_clock_s: 0.0,
        }
    }

    /// Rate point for `(model, test_set)` at the SNR closest to `snr_db`.
    pub fn rate_at(&self, model: &str, test_set: &str, snr_db: f64) -> Option<&RatePoint> {
        self.rates
            .iter()
            .filter(|r| r.model == model && r.test_set == test_set)
            .min_by(|a, b| (a.snr_db - snr_db).abs().total_cmp(&(b.snr_db - snr_db).abs()))
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub summary: ModelSummary,
    pub config: NetConfig,
    pub params: NetParams,
}

struct TestSet {
    name: String,
    batch: Batch,
    oracle: Vec<f64>,
    oracle_snr_db: f64,
}

type Progress = Box<dyn Fn(&str)>;

/// Data and trained models for one configuration and seed. Models are cached
/// by training composition, so experiments that share a run train it once.
pub struct Session {
    config: ExperimentConfig,
    seed: u64,
    pools: Vec<ChannelDataset>,
    mixed_test: ChannelDataset,
    tests: Vec<TestSet>,
    models: BTreeMap<String, TrainedModel>,
    hessians: Vec<HessianEstimate>,
    progress: Option<Progress>,
}

fn to_batch(dataset: &ChannelDataset, pnr_db: f64) -> Result<Batch> {
    let truth: Vec<_> = dataset.channels().map(<[_]>::to_vec).collect();
    let est = dataset
        .samples()
        .iter()
        .map(|s| estimate_channel(&s.h, pnr_db, rng::derive(s.seed_index, &s.scene_id)))
        .collect::<Result<Vec<_>>>()?;
    Batch::from_estimates(&est, truth, dataset.n_antennas())
}

pub fn model_label(q: f64, n: usize) -> String {
    format!("q{q:.2}_n{n}")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl Session {
    /// Materializes the training pools and held-out sets of both families.
    pub fn new(config: ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut pools = Vec::new();
        let mut held_out = Vec::new();
        for id in &config.families {
            let family = config.family(id)?;
            pools.push(ChannelDataset::materialize(
                family,
                &config.array,
                config.n_total,
                rng::derive(seed, "train-pool"),
            )?);
            held_out.push(ChannelDataset::materialize(
                family,
                &config.array,
                config.n_test,
                rng::derive(seed, "test-pool"),
            )?);
        }
        let spec = MixSpec::new(vec![config.theory.test_q, 1.0 - config.theory.test_q], config.n_test)?;
        let mixed_test = mix_datasets(&held_out, &spec, rng::derive(seed, "test-mix"))?;
        let mut tests = Vec::new();
        for (name, d) in config.families.iter().zip(&held_out).chain([(&MIXED_TEST.to_string(), &mixed_test)]) {
            tests.push(TestSet {
                name: name.clone(),
                batch: to_batch(d, config.pnr_db)?,
                oracle: Vec::new(),
                oracle_snr_db: f64::NAN,
            });
        }
        Ok(Self {
            config,
            seed,
            pools,
            mixed_test,
            tests,
            models: BTreeMap::new(),
            hessians: Vec::new(),
            progress: None,
        })
    }

    /// Reports each training run and phase to `f`.
    pub fn with_progress(mut self, f: impl Fn(&str) + 'static) -> Self {
        self.progress = Some(Box::new(f));
        self
    }

    fn log(&self, msg: &str) {
        if let Some(f) = &self.progress {
            f(msg);
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Training pool of each family, in `config.families` order.
    pub fn pools(&self) -> &[ChannelDataset] {
        &self.pools
    }

    pub fn mixed_test(&self) -> &ChannelDataset {
        &self.mixed_test
    }

    pub fn models(&self) -> impl Iterator<Item = &TrainedModel> {
        self.models.values()
    }

    pub fn model(&self, label: &str) -> Option<&TrainedModel> {
        self.models.get(label)
    }

    /// Hessians from the most recent theory evaluation.
    pub fn hessians(&self) -> &[HessianEstimate] {
        &self.hessians
    }

    /// Training set with first-family proportion `q` and `n` samples.
    pub fn training_set(&self, q: f64, n: usize) -> Result<ChannelDataset> {
        mix_datasets(&self.pools, &MixSpec::new(vec![q, 1.0 - q], n)?, rng::derive(self.seed, "train-mix"))
    }

    /// Trains (or fetches from the cache) the model for `(q, n)` and returns its label.
    pub fn train_model(&mut self, q: f64, n: usize) -> Result<String> {
        let label = model_label(q, n);
        if self.models.contains_key(&label) {
            return Ok(label);
        }
        let data = self.training_set(q, n)?;
        let net = self.config.net_config(self.config.reference_snr_db);
        let started = Instant::now();
        let params = NetParams::init(&net, self.seed)?;
        let (params, losses) =
            train(params, &to_batch(&data, self.config.pnr_db)?, &net, &self.config.schedule(self.seed))?;
        let final_train_loss = *losses.last().expect("at least one epoch");
        self.log(&format!("trained {label}: loss {final_train_loss:.4} in {:.1}s", started.elapsed().as_secs_f64()));
        let summary = ModelSummary {
            label: label.clone(),
            q: Some(q),
            n_train: n,
            counts: data.scene_counts(),
            final_train_loss: Some(final_train_loss),
        };
        self.models.insert(label.clone(), TrainedModel { summary, config: net, params });
        Ok(label)
    }

    /// Inserts an externally trained model under `label`.
    pub fn insert_model(&mut self, label: &str, config: NetConfig, params: NetParams) {
        let summary =
            ModelSummary { label: label.into(), q: None, n_train: 0, counts: Vec::new(), final_train_loss: None };
        self.models.insert(label.into(), TrainedModel { summary, config, params });
    }

    fn test_index(&self, name: &str) -> Result<usize> {
        self.tests
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::Config(format!("no test set named {name:?}")))
    }

    /// Mean network and oracle rates of `label` on test set `test` at `snr_db`.
    /// Fails if any sample's rate exceeds its MRT oracle.
    pub fn evaluate(&mut self, label: &str, test: &str, snr_db: f64) -> Result<(f64, f64)> {
        let t = self.test_index(test)?;
        let model = self.models.get(label).ok_or_else(|| Error::Config(format!("no model named {label:?}")))?;
        let net = NetConfig { noise_var: 1.0, ..model.config.clone() }.with_snr_db(snr_db);
        let set = &mut self.tests[t];
        if set.oracle_snr_db != snr_db {
            set.oracle = set.batch.channels.iter().map(|h| mrt_rate(h, net.power_p, net.noise_var)).collect();
            set.oracle_snr_db = snr_db;
        }
        let rates = evaluate_rates(&model.params, &net, &set.batch)?;
        for (i, (&r, &o)) in rates.iter().zip(&set.oracle).enumerate() {
            if !(r >= 0.0 && r <= o + 1e-9) {
                return Err(Error::OracleExceeded { sample: i, rate: r, oracle: o });
            }
        }
        Ok((mean(&rates), mean(&set.oracle)))
    }

    fn rate_curve(&mut self, label: &str, tests: &[String], out: &mut Vec<RatePoint>) -> Result<()> {
        let grid = self.config.snr_grid_db.clone();
        for test in tests {
            for &snr_db in &grid {
                let (rate, oracle_rate) = self.evaluate(label, test, snr_db)?;
                out.push(RatePoint {
                    model: label.into(),
                    test_set: test.clone(),
                    snr_db,
                    rate,
                    oracle_rate,
                    ratio: rate / oracle_rate,
                });
            }
        }
        Ok(())
    }

    fn proportion_of(&self, family: &str) -> Result<f64> {
        match self.config.families.iter().position(|f| f == family) {
            Some(0) => Ok(1.0),
            Some(_) => Ok(0.0),
            None => Err(Error::Config(format!("{family:?} is not one of the mixed families"))),
        }
    }

    /// Trains on `train_family` alone and evaluates the rate-vs-SNR curve on
    /// the held-out set of each of `test_families`.
    pub fn run_pure(&mut self, train_family: &str, test_families: &[String]) -> Result<RunResult> {
        let started = Instant::now();
        let q = self.proportion_of(train_family)?;
        for t in test_families {
            self.test_index(t)?;
        }
        let label = self.train_model(q, self.config.n_total)?;
        let mut result = RunResult::new("pure", self);
        result.models.push(self.models[&label].summary.clone());
        self.rate_curve(&label, test_families, &mut result.rates)?;
        result.wall_clock_s = started.elapsed().as_secs_f64();
        Ok(result)
    }

    /// Trains on the `q` mixture and evaluates on both families and the mixed test set.
    pub fn run_mixed(&mut self, q: f64) -> Result<RunResult> {
        let started = Instant::now();
        let label = self.train_model(q, self.config.n_total)?;
        let mut result = RunResult::new("mixed", self);
        result.models.push(self.models[&label].summary.clone());
        let tests: Vec<String> = self.tests.iter().map(|t| t.name.clone()).collect();
        self.rate_curve(&label, &tests, &mut result.rates)?;
        result.wall_clock_s = started.elapsed().as_secs_f64();
        Ok(result)
    }

    /// Rate-vs-SNR curves of an existing model (see [`Session::insert_model`])
    /// on every held-out set.
    pub fn run_eval(&mut self, label: &str) -> Result<RunResult> {
        let started = Instant::now();
        let model = self.models.get(label).ok_or_else(|| Error::Config(format!("no model named {label:?}")))?;
        if model.config.n_antennas != self.config.array.n_antennas || model.config.n_users != 1 {
            return Err(Error::AntennaMismatch {
                expected: self.config.array.n_antennas,
                found: model.config.n_antennas,
            });
        }
        let mut result = RunResult::new("eval", self);
        result.models.push(model.summary.clone());
        let tests: Vec<String> = self.tests.iter().map(|t| t.name.clone()).collect();
        self.rate_curve(label, &tests, &mut result.rates)?;
        result.wall_clock_s = started.elapsed().as_secs_f64();
        Ok(result)
    }

    /// Expected input Hessians of the reference model and the resulting
    /// `C(q)` curve over `config.q_grid`.
    pub fn theory(&mut self) -> Result<TheoryResult> {
        let th = self.config.theory.clone();
        let label = self.train_model(th.reference_q, self.config.n_total)?;
        let model = &self.models[&label];
        let started = Instant::now();
        let mut sigmas = Vec::new();
        for (id, pool) in self.config.families.iter().zip(&self.pools) {
            let mut h = expected_input_hessian(&model.params, pool, &model.config, th.n_samples, th.fd_step)?;
            h.dataset_id = format!("train_{id}");
            sigmas.push(h);
        }
        let mut star =
            expected_input_hessian(&model.params, &self.mixed_test, &model.config, th.n_samples, th.fd_step)?;
        star.dataset_id = format!("test_{MIXED_TEST}");
        self.log(&format!("hessians of {label} in {:.1}s", started.elapsed().as_secs_f64()));

        let grid: Vec<Vec<f64>> = self.config.q_grid.iter().map(|&q| vec![q, 1.0 - q]).collect();
        let raw_curve = sweep_grid(&star, &sigmas, grid.clone());
        let (used_star, used_sigmas) = match th.curvature {
            Curvature::Raw => (star.clone(), sigmas.clone()),
            Curvature::Absolute => {
                (absolute_curvature(&star)?, sigmas.iter().map(absolute_curvature).collect::<Result<Vec<_>>>()?)
            }
        };
        let curve = sweep_grid(&used_star, &used_sigmas, grid);
        let diag = diagonalize_pair(&used_star, &used_sigmas)?;
        let lambda = lambda_matrix(&diag.d_star, &diag.d_k)?;
        let c_rational: Vec<Option<f64>> = curve.q_grid.iter().map(|q| c_of_q_rational(&lambda, q).ok()).collect();
        let rational_argmin = argmin_with_ties(&c_rational);

        let hessians = sigmas
            .iter()
            .chain([&star])
            .map(|h| {
                let eig = h.matrix.clone().symmetric_eigenvalues();
                HessianSummary {
                    dataset_id: h.dataset_id.clone(),
                    n_samples: h.n_samples,
                    trace: h.matrix.trace(),
                    min_eigenvalue: eig.min(),
                    max_eigenvalue: eig.max(),
                    positive_eigenvalues: eig.iter().filter(|v| **v > 0.0).count(),
                }
            })
            .collect();
        let offdiag_ratio = used_sigmas.iter().zip(&diag.offdiag_norms).map(|(s, o)| o / s.matrix.norm()).collect();
        let result = TheoryResult {
            reference_model: label,
            test_q: th.test_q,
            fd_step: th.fd_step,
            curvature: th.curvature,
            hessians,
            q: self.config.q_grid.clone(),
            c_direct: curve.c_values.clone(),
            c_direct_raw: raw_curve.c_values,
            c_rational,
            ridges: curve.ridges.clone(),
            failures: curve.failures.clone(),
            argmin_q: curve.argmin_q().map(|q| q[0]),
            rational_argmin_q: rational_argmin.map(|i| self.config.q_grid[i]),
            u_shape_violations: curve.u_shape_violations(),
            u_shaped: curve.is_u_shaped(),
            excluded_dimensions: lambda.excluded.clone(),
            offdiag_ratio,
        };
        self.hessians = sigmas;
        self.hessians.push(star);
        Ok(result)
    }

    /// Theory curve alone, from the reference model.
    pub fn run_theory(&mut self) -> Result<RunResult> {
        let started = Instant::now();
        let theory = self.theory()?;
        let mut result = RunResult::new("theory", self);
        result.models.push(self.models[&theory.reference_model].summary.clone());
        result.theory = Some(theory);
        result.wall_clock_s = started.elapsed().as_secs_f64();
        Ok(result)
    }

    /// Mixed-test loss at the reference SNR for models trained at `q` on each
    /// of `n_values` samples, and the log-linear fit of the loss above the
    /// oracle's.
    pub fn scaling(&mut self, q: f64, n_values: &[usize]) -> Result<ScalingResult> {
        let snr = self.config.reference_snr_db;
        let n_values = n_values.to_vec();
        let mut models = Vec::new();
        let mut test_losses = Vec::new();
        let mut oracle_loss = 0.0;
        for &n in &n_values {
            let label = self.train_model(q, n)?;
            let (rate, oracle) = self.evaluate(&label, MIXED_TEST, snr)?;
            models.push(label);
            test_losses.push(-rate);
            oracle_loss = -oracle;
        }
        let extra_losses: Vec<f64> = test_losses.iter().map(|l| l - oracle_loss).collect();
        let (fit, error) = match fit_scaling_law(&n_values, &extra_losses) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(ScalingResult { q, n_values, models, test_losses, oracle_loss, extra_losses, fit, error })
    }

    /// Trains one model per `config.q_grid` point, evaluates each on the mixed
    /// test set, and overlays the theory curve and the scaling fit. A grid
    /// point that fails is recorded and skipped.
    pub fn run_sweep(&mut self) -> Result<RunResult> {
        let started = Instant::now();
        if self.config.q_grid.len() < 3 {
            return Err(Error::Config("a sweep needs at least 3 q_grid points".into()));
        }
        let snr = self.config.reference_snr_db;
        let mut result = RunResult::new("sweep", self);
        let mut measured = Vec::new();
        let mut failures = Vec::new();
        for q in self.config.q_grid.clone() {
            let outcome = self.train_model(q, self.config.n_total).and_then(|label| {
                let (rate, oracle) = self.evaluate(&label, MIXED_TEST, snr)?;
                Ok((label, rate, oracle))
            });
            match outcome {
                Ok((label, rate, oracle)) => {
                    result.models.push(self.models[&label].summary.clone());
                    measured.push((q, label, rate, oracle));
                }
                Err(e) => failures.push((q, e.to_string())),
            }
        }
        if measured.is_empty() {
            return Err(Error::Config(format!("every sweep point failed: {failures:?}")));
        }
        let theory = match self.theory() {
            Ok(t) => Some(t),
            Err(e) => {
                failures.push((self.config.theory.reference_q, format!("theory: {e}")));
                None
            }
        };
        let tests: Vec<String> = self.tests.iter().map(|t| t.name.clone()).collect();
        for (_, label, _, _) in &measured {
            self.rate_curve(label, &tests, &mut result.rates)?;
        }
        let losses: Vec<f64> = measured.iter().map(|m| -m.2).collect();
        let extra = extra_loss_empirical(&losses)?;
        let points: Vec<SweepPoint> = measured
            .iter()
            .zip(extra)
            .map(|((q, label, rate, oracle), extra_loss)| {
                let at = theory.as_ref().and_then(|t| t.q.iter().position(|x| x == q));
                let c_direct = at.and_then(|i| theory.as_ref().unwrap().c_direct[i]);
                let c_rational = at.and_then(|i| theory.as_ref().unwrap().c_rational[i]);
                SweepPoint {
                    q: *q,
                    model: label.clone(),
                    rate: *rate,
                    oracle_rate: *oracle,
                    loss: -rate,
                    extra_loss,
                    c_direct,
                    c_rational,
                    log_c: c_direct.filter(|c| *c > 0.0).map(f64::ln),
                }
            })
            .collect();
        let best = points.iter().fold(&points[0], |b, p| if p.rate > b.rate { p } else { b });
        result.sweep = Some(SweepResult {
            empirical_argmax_q: best.q,
            theory_argmin_q: theory.as_ref().and_then(|t| t.argmin_q),
            points,
            failures,
        });
        result.theory = theory;
        if !self.config.theory.scaling_n.is_empty() {
            let n_values = self.config.theory.scaling_n.clone();
            result.scaling = Some(self.scaling(self.config.theory.reference_q, &n_values)?);
            for label in &result.scaling.as_ref().unwrap().models {
                if !result.models.iter().any(|m| &m.label == label) {
                    result.models.push(self.models[label].summary.clone());
                }
            }
        }
        result.wall_clock_s = started.elapsed().as_secs_f64();
        Ok(result)
    }
}

/// [`Session::run_pure`] for the first configured seed.
pub fn run_pure(config: &ExperimentConfig, train_family: &str, test_families: &[String]) -> Result<RunResult> {
    Session::new(config.clone(), config.seeds[0])?.run_pure(train_family, test_families)
}

/// [`Session::run_mixed`] for the first configured seed.
pub fn run_mixed(config: &ExperimentConfig, q: f64) -> Result<RunResult> {
    Session::new(config.clone(), config.seeds[0])?.run_mixed(q)
}

/// [`Session::run_sweep`] for the first configured seed.
pub fn run_sweep(config: &ExperimentConfig) -> Result<RunResult> {
    Session::new(config.clone(), config.seeds[0])?.run_sweep()
}
