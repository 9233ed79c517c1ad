//! WebAssembly bindings for the static demo page in `www/`. Every export
//! takes plain values and returns a JSON string; the page does the rendering.

use artss::latent::{read_samples, write_samples, Format, LatentVector};
use artss::rejection::filter_unlabeled;
use artss::seed;
use artss::toy::{make_toy_task, train_arm, Arm, TaskConfig, TrainConfig};
use artss::{Pool, SampleRecord, SampleSet};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js(e: artss::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Filters pasted unlabeled CSV rows (`id,z_1..z_d,sigma`) against the
/// labeled rows.
#[wasm_bindgen]
pub fn reject(labeled_csv: &str, unlabeled_csv: &str, m_nn: usize) -> Result<String, JsError> {
    reject_json(labeled_csv, unlabeled_csv, m_nn).map_err(js)
}

pub fn reject_json(labeled_csv: &str, unlabeled_csv: &str, m_nn: usize) -> artss::Result<String> {
    let labeled = read_samples(labeled_csv.as_bytes(), Format::Csv, Pool::Labeled)?;
    let unlabeled = read_samples(unlabeled_csv.as_bytes(), Format::Csv, Pool::Unlabeled)?;
    let out = filter_unlabeled(&unlabeled, &labeled, m_nn, 0)?;
    Ok(json!({
        "threshold": out.state.t,
        "m_nn": out.state.m_nn,
        "accepted": out.accepted.len(),
        "rejected": out.rejected.len(),
        "decisions": out.decisions,
    })
    .to_string())
}

/// A labeled cluster plus an unlabeled pool, half of which is pushed
/// `shift` units off the cluster along a random direction. Returns
/// `{"labeled": csv, "unlabeled": csv}`.
#[wasm_bindgen]
pub fn sample_pool(seed: u64, n_labeled: usize, n_unlabeled: usize, dim: usize, shift: f64) -> Result<String, JsError> {
    sample_pool_json(seed, n_labeled, n_unlabeled, dim, shift).map_err(js)
}

pub fn sample_pool_json(seed: u64, n_labeled: usize, n_unlabeled: usize, dim: usize, shift: f64) -> artss::Result<String> {
    if dim == 0 || n_labeled < 2 {
        return Err(artss::Error::InvalidConfig("need a positive dimension and at least two labeled samples".into()));
    }
    let mut rng = seed::stream(seed, "demo.pool");
    let gauss = |rng: &mut seed::Rng| -> Vec<f64> { (0..dim).map(|_| StandardNormal.sample(rng)).collect() };
    let center: Vec<f64> = gauss(&mut rng).iter().map(|v| v + 3.0).collect();
    let away = gauss(&mut rng);
    let draw = |rng: &mut seed::Rng, id: String, shifted: bool, pool: Pool| -> artss::Result<SampleRecord> {
        let noise = gauss(rng);
        let z: Vec<f64> = (0..dim)
            .map(|i| center[i] + 0.5 * noise[i] + if shifted { shift * away[i] } else { 0.0 })
            .collect();
        let z = LatentVector::new(z).map_err(|_| artss::Error::ZeroVector(id.clone()))?;
        let sigma = rng.random_range(0.5..1.5) * if shifted { 1.0 + 0.3 * shift.abs() } else { 1.0 };
        SampleRecord::new(id, z, sigma, pool)
    };
    let labeled = (0..n_labeled)
        .map(|i| draw(&mut rng, format!("l{i}"), false, Pool::Labeled))
        .collect::<artss::Result<Vec<_>>>()?;
    let unlabeled = (0..n_unlabeled)
        .map(|i| draw(&mut rng, format!("u{i}"), i % 2 == 1, Pool::Unlabeled))
        .collect::<artss::Result<Vec<_>>>()?;
    let csv = |records: Vec<SampleRecord>| -> artss::Result<String> {
        let mut buf = Vec::new();
        write_samples(&SampleSet::new(records)?, &mut buf, Format::Csv)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    };
    Ok(json!({ "labeled": csv(labeled)?, "unlabeled": csv(unlabeled)? }).to_string())
}

/// Trains one toy arm and returns its per-epoch test metrics.
#[wasm_bindgen]
pub fn train_toy(arm: &str, rho: f64, seed: u64, epochs: usize) -> Result<String, JsError> {
    train_toy_json(arm, rho, seed, epochs).map_err(js)
}

pub fn train_toy_json(arm: &str, rho: f64, seed: u64, epochs: usize) -> artss::Result<String> {
    let arm: Arm = arm.parse()?;
    let task = make_toy_task(&TaskConfig { seed, rho, ..TaskConfig::default() })?;
    let run = train_arm(&task, &TrainConfig { arm, seed, epochs, ..TrainConfig::default() })?;
    Ok(json!({
        "arm": arm.name(),
        "test_mse": run.evaluation.mse,
        "psnr": run.evaluation.psnr,
        "unsup_updates": run.unsup_updates,
        "accepted_by_kind": run.accepted_by_kind,
        "epochs": run.epochs,
    })
    .to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_pool_round_trips_through_reject() {
        let pool: serde_json::Value = serde_json::from_str(&sample_pool_json(1, 20, 40, 4, 2.0).unwrap()).unwrap();
        let out: serde_json::Value = serde_json::from_str(
            &reject_json(pool["labeled"].as_str().unwrap(), pool["unlabeled"].as_str().unwrap(), 3).unwrap(),
        )
        .unwrap();
        assert_eq!(out["accepted"].as_u64().unwrap() + out["rejected"].as_u64().unwrap(), 40);
        assert_eq!(out["decisions"].as_array().unwrap().len(), 40);
    }

    #[test]
    fn bad_input_is_an_error_not_a_panic() {
        assert!(reject_json("a,1,0,0.5\n", "b,1,0\n", 3).is_err());
        assert!(train_toy_json("bogus", 0.5, 0, 1).is_err());
    }

    #[test]
    fn toy_training_reports_every_epoch() {
        let out: serde_json::Value = serde_json::from_str(&train_toy_json("nr", 0.5, 0, 2).unwrap()).unwrap();
        assert_eq!(out["epochs"].as_array().unwrap().len(), 3);
    }
}
