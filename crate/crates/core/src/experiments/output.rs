use std::fs;
use std::path::Path;

use serde::Serialize;

use super::run::{RunResult, Session};
use crate::beamnet::{encode_checkpoint, NetConfig, NetParams};
use crate::binio::write_atomic;
use crate::error::Result;
use crate::theory::{encode_hessian, HessianEstimate};

/// Binary artifacts that accompany a [`RunResult`].
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub checkpoints: Vec<(String, NetConfig, NetParams)>,
    pub hessians: Vec<HessianEstimate>,
}

impl Session {
    /// Checkpoints of every model named in `result` and the Hessians behind its theory curve.
    pub fn artifacts(&self, result: &RunResult) -> Artifacts {
        let checkpoints = result
            .models
            .iter()
            .filter_map(|m| self.model(&m.label))
            .map(|m| (m.summary.label.clone(), m.config.clone(), m.params.clone()))
            .collect();
        let hessians = if result.theory.is_some() { self.hessians().to_vec() } else { Vec::new() };
        Artifacts { checkpoints, hessians }
    }
}

#[derive(Serialize)]
struct RateRow<'a> {
    model: &'a str,
    test_set: &'a str,
    snr_db: f64,
    rate: f64,
    oracle_rate: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct SweepRow {
    q: f64,
    rate: Option<f64>,
    loss: Option<f64>,
    extra_loss: Option<f64>,
    #[serde(rename = "C_direct")]
    c_direct: Option<f64>,
    #[serde(rename = "C_rational")]
    c_rational: Option<f64>,
    #[serde(rename = "log_C")]
    log_c: Option<f64>,
}

fn csv_bytes<T: Serialize>(headers: &[&str], rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(headers)?;
    for row in rows {
        w.serialize(row)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

/// `model,test_set,snr_db,rate,oracle_rate,ratio`, one row per rate point.
pub fn write_rates_csv(result: &RunResult, path: &Path) -> Result<()> {
    let rows = result.rates.iter().map(|r| RateRow {
        model: &r.model,
        test_set: &r.test_set,
        snr_db: r.snr_db,
        rate: r.rate,
        oracle_rate: r.oracle_rate,
        ratio: r.ratio,
    });
    write_atomic(path, &csv_bytes(&["model", "test_set", "snr_db", "rate", "oracle_rate", "ratio"], rows)?)
}

/// `q,rate,loss,extra_loss,C_direct,C_rational,log_C`, one row per grid
/// point. Missing values are empty fields.
pub fn write_sweep_csv(result: &RunResult, path: &Path) -> Result<()> {
    let headers = ["q", "rate", "loss", "extra_loss", "C_direct", "C_rational", "log_C"];
    let rows: Vec<SweepRow> = match (&result.sweep, &result.theory) {
        (Some(sweep), _) => sweep
            .points
            .iter()
            .map(|p| SweepRow {
                q: p.q,
                rate: Some(p.rate),
                loss: Some(p.loss),
                extra_loss: Some(p.extra_loss),
                c_direct: p.c_direct,
                c_rational: p.c_rational,
                log_c: p.log_c,
            })
            .collect(),
        (None, Some(t)) => {
            t.q.iter()
                .enumerate()
                .map(|(i, &q)| SweepRow {
                    q,
                    rate: None,
                    loss: None,
                    extra_loss: None,
                    c_direct: t.c_direct[i],
                    c_rational: t.c_rational[i],
                    log_c: t.c_direct[i].filter(|c| *c > 0.0).map(f64::ln),
                })
                .collect()
        }
        (None, None) => Vec::new(),
    };
    write_atomic(path, &csv_bytes(&headers, rows)?)
}

/// Writes `results.json`, `rates_vs_snr.csv`, `sweep.csv` (when the result
/// has a sweep or theory curve), `checkpoints/<model>.bnet` and
/// `hessians/<dataset>.hess` under `out_dir`. Every file is replaced
/// atomically.
pub fn emit_results(result: &RunResult, artifacts: &Artifacts, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut json = serde_json::to_vec_pretty(result)?;
    json.push(b'\n');
    write_atomic(&out_dir.join("results.json"), &json)?;
    write_rates_csv(result, &out_dir.join("rates_vs_snr.csv"))?;
    if result.sweep.is_some() || result.theory.is_some() {
        write_sweep_csv(result, &out_dir.join("sweep.csv"))?;
    }
    if !artifacts.checkpoints.is_empty() {
        let dir = out_dir.join("checkpoints");
        fs::create_dir_all(&dir)?;
        for (label, config, params) in &artifacts.checkpoints {
            write_atomic(&dir.join(format!("{label}.bnet")), &encode_checkpoint(config, params))?;
        }
    }
    if !artifacts.hessians.is_empty() {
        let dir = out_dir.join("hessians");
        fs::create_dir_all(&dir)?;
        for h in &artifacts.hessians {
            write_atomic(&dir.join(format!("{}.hess", h.dataset_id)), &encode_hessian(h))?;
        }
    }
    Ok(())
}
