//! Hardware proxy: calibrate and apply the linear ops-to-latency model and
//! the constant-power energy model, per (backbone, MCU) pair.
//!
//! Whole models sampled from one backbone show latency linear in op count
//! on flat-memory MCUs, even though individual layers scatter; different
//! backbones fit different slopes, so fits never mix groups. Power is
//! nearly independent of the model, so energy is power times predicted
//! latency.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HwError {
    #[error("need at least 3 measurement rows to fit, got {0}")]
    NotEnoughRows(usize),
    #[error("op counts are all equal; the latency slope is unidentifiable")]
    DegenerateOps,
    #[error("row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("no power measurements in this group; cannot estimate energy")]
    MissingPower,
}

pub type Result<T> = std::result::Result<T, HwError>;

/// A target device: on-chip memory limits and nominal active power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McuProfile {
    pub name: String,
    pub sram_bytes: u64,
    pub flash_bytes: u64,
    pub nominal_power_mw: f64,
}

/// The three commodity Cortex-M devices this crate targets by default.
pub fn builtin_profiles() -> Vec<McuProfile> {
    vec![
        McuProfile {
            name: "stm32f446re".into(),
            sram_bytes: 128 * 1024,
            flash_bytes: 512 * 1024,
            nominal_power_mw: 100.0,
        },
        McuProfile {
            name: "stm32f746zg".into(),
            sram_bytes: 320 * 1024,
            flash_bytes: 1024 * 1024,
            nominal_power_mw: 300.0,
        },
        McuProfile {
            name: "stm32f767zi".into(),
            sram_bytes: 512 * 1024,
            flash_bytes: 2 * 1024 * 1024,
            nominal_power_mw: 300.0,
        },
    ]
}

pub fn load_profiles(text: &str) -> Result<Vec<McuProfile>> {
    let profiles: Vec<McuProfile> =
        serde_json::from_str(text).map_err(|e| HwError::Schema(e.to_string()))?;
    for p in &profiles {
        if p.sram_bytes == 0 || p.flash_bytes == 0 || p.nominal_power_mw <= 0.0 {
            return Err(HwError::Schema(format!("profile {}: fields must be positive", p.name)));
        }
    }
    Ok(profiles)
}

pub fn save_profiles(profiles: &[McuProfile]) -> String {
    serde_json::to_string_pretty(profiles).expect("profiles always serialize")
}

/// One characterized model: op count, measured latency, optional power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRow {
    pub model_id: String,
    pub backbone_id: String,
    pub mcu_id: String,
    pub ops: u64,
    pub latency_ms: f64,
    pub power_mw: Option<f64>,
}

/// Fitted per-(backbone, MCU) latency line and power statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwProxyModel {
    pub backbone_id: String,
    pub mcu_id: String,
    pub slope_ms_per_mop: f64,
    pub intercept_ms: f64,
    pub r_squared: f64,
    pub mean_power_mw: Option<f64>,
    /// Coefficient of variation (sigma/mu) of measured power.
    pub power_cv: Option<f64>,
}

pub fn save_models(models: &[HwProxyModel]) -> String {
    serde_json::to_string_pretty(models).expect("models always serialize")
}

pub fn load_models(text: &str) -> Result<Vec<HwProxyModel>> {
    let models: Vec<HwProxyModel> =
        serde_json::from_str(text).map_err(|e| HwError::Schema(e.to_string()))?;
    for m in &models {
        if !(0.0..=1.0).contains(&m.r_squared) {
            return Err(HwError::Schema(format!(
                "model {}/{}: r_squared {} outside [0, 1]",
                m.backbone_id, m.mcu_id, m.r_squared
            )));
        }
        if m.power_cv.is_some_and(|cv| cv < 0.0) {
            return Err(HwError::Schema(format!(
                "model {}/{}: negative power_cv",
                m.backbone_id, m.mcu_id
            )));
        }
    }
    Ok(models)
}

/// Ordinary least squares `latency_ms = slope * Mops + intercept` over one
/// (backbone, MCU) group.
///
/// Returns the fitted model plus non-fatal warnings: an r-squared under
/// 0.95 (the empirical floor for whole-model fits) and any rows from a
/// different group, which are excluded rather than mixed in.
pub fn fit_latency_model(rows: &[MeasurementRow]) -> Result<(HwProxyModel, Vec<String>)> {
    let Some(first) = rows.first() else {
        return Err(HwError::NotEnoughRows(0));
    };
    let group_key = (first.backbone_id.clone(), first.mcu_id.clone());
    let mut warnings = Vec::new();
    let group: Vec<&MeasurementRow> = rows
        .iter()
        .filter(|r| (r.backbone_id.as_str(), r.mcu_id.as_str()) == (group_key.0.as_str(), group_key.1.as_str()))
        .collect();
    if group.len() != rows.len() {
        warnings.push(format!(
            "{} rows from other (backbone, mcu) groups were excluded; latency slopes differ per backbone",
            rows.len() - group.len()
        ));
    }
    if group.len() < 3 {
        return Err(HwError::NotEnoughRows(group.len()));
    }
    for (i, r) in group.iter().enumerate() {
        if r.ops == 0 || r.latency_ms <= 0.0 {
            return Err(HwError::BadRow {
                row: i + 1,
                reason: format!("ops {} and latency_ms {} must be positive", r.ops, r.latency_ms),
            });
        }
    }

    let n = group.len() as f64;
    let xs: Vec<f64> = group.iter().map(|r| r.ops as f64 / 1e6).collect();
    let ys: Vec<f64> = group.iter().map(|r| r.latency_ms).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    if sxx == 0.0 {
        return Err(HwError::DegenerateOps);
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_tot: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    if r_squared < 0.95 {
        warnings.push(format!(
            "r_squared {r_squared:.4} is below the 0.95 whole-model floor; check that rows come from one backbone"
        ));
    }

    let powers: Vec<f64> = group.iter().filter_map(|r| r.power_mw).collect();
    let (mean_power_mw, power_cv) = if powers.is_empty() {
        (None, None)
    } else {
        let mu = powers.iter().sum::<f64>() / powers.len() as f64;
        let var = powers.iter().map(|p| (p - mu).powi(2)).sum::<f64>() / powers.len() as f64;
        (Some(mu), Some(var.sqrt() / mu))
    };

    Ok((
        HwProxyModel {
            backbone_id: group_key.0,
            mcu_id: group_key.1,
            slope_ms_per_mop: slope,
            intercept_ms: intercept,
            r_squared,
            mean_power_mw,
            power_cv,
        },
        warnings,
    ))
}

/// Fit every (backbone, MCU) group present in the rows, in first-seen order.
pub fn calibrate_all(rows: &[MeasurementRow]) -> Result<Vec<(HwProxyModel, Vec<String>)>> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.backbone_id.clone(), r.mcu_id.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.iter()
        .map(|key| {
            let group: Vec<MeasurementRow> = rows
                .iter()
                .filter(|r| (&r.backbone_id, &r.mcu_id) == (&key.0, &key.1))
                .cloned()
                .collect();
            fit_latency_model(&group)
        })
        .collect()
}

/// Predicted whole-model latency in milliseconds, never below the fitted
/// intercept (per-inference dispatch overhead) nor below zero.
pub fn predict_latency(model: &HwProxyModel, ops: u64) -> f64 {
    let raw = model.slope_ms_per_mop * (ops as f64 / 1e6) + model.intercept_ms;
    raw.max(model.intercept_ms).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub energy_mj: f64,
    pub latency_ms: f64,
    /// Set when measured power varied beyond cv 0.05, where the
    /// constant-power assumption starts to look shaky.
    pub low_confidence: bool,
}

/// Energy per inference from constant power times predicted latency.
pub fn estimate_energy(model: &HwProxyModel, ops: u64) -> Result<EnergyEstimate> {
    let power = model.mean_power_mw.ok_or(HwError::MissingPower)?;
    let latency_ms = predict_latency(model, ops);
    Ok(EnergyEstimate {
        energy_mj: power * latency_ms / 1000.0,
        latency_ms,
        low_confidence: model.power_cv.is_some_and(|cv| cv > 0.05),
    })
}

// ── Measurement CSV ──────────────────────────────────────────────────
// Header: model_id,backbone_id,mcu_id,ops,latency_ms,power_mw
// power_mw may be empty. UTF-8, comma separator, `.` decimal point.

pub fn read_measurements_csv(text: &str) -> Result<Vec<MeasurementRow>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.deserialize::<MeasurementRow>().enumerate() {
        let row_no = i + 2; // 1-based, after the header line
        let row: MeasurementRow = record.map_err(|e| HwError::Csv(format!("row {row_no}: {e}")))?;
        if row.ops == 0 {
            return Err(HwError::BadRow { row: row_no, reason: "ops must be positive".into() });
        }
        if row.latency_ms <= 0.0 {
            return Err(HwError::BadRow {
                row: row_no,
                reason: format!("latency_ms {} must be positive", row.latency_ms),
            });
        }
        if row.power_mw.is_some_and(|p| p <= 0.0) {
            return Err(HwError::BadRow {
                row: row_no,
                reason: "power_mw must be positive when present".into(),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_measurements_csv(rows: &[MeasurementRow]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).expect("rows always serialize");
    }
    String::from_utf8(writer.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

// ── Bundled synthetic calibration data ───────────────────────────────

/// Ground-truth line behind one synthetic (backbone, MCU) group.
#[derive(Debug, Clone)]
pub struct SyntheticLine {
    pub backbone_id: &'static str,
    pub mcu_id: &'static str,
    pub slope_ms_per_mop: f64,
    pub intercept_ms: f64,
    /// Relative sigma of the Gaussian latency noise.
    pub noise_frac: f64,
    pub power_mw: f64,
}

/// Two fictional backbones on one fictional device. The documented slopes
/// and intercepts are what calibration is expected to recover.
pub fn synthetic_lines() -> Vec<SyntheticLine> {
    vec![
        SyntheticLine {
            backbone_id: "ds_cnn_audio",
            mcu_id: "sim_m4",
            slope_ms_per_mop: 4.2,
            intercept_ms: 12.0,
            noise_frac: 0.02,
            power_mw: 310.0,
        },
        SyntheticLine {
            backbone_id: "ibn_image",
            mcu_id: "sim_m4",
            slope_ms_per_mop: 6.0,
            intercept_ms: 8.0,
            noise_frac: 0.02,
            power_mw: 310.0,
        },
    ]
}

pub const SYNTHETIC_MODELS_PER_BACKBONE: usize = 200;

/// Deterministic synthetic measurement set: 200 models per backbone with
/// 2% relative Gaussian latency noise and near-constant power
/// (cv ~ 0.007), mirroring what hardware characterization produces.
pub fn synthetic_measurements(seed: u64) -> Vec<MeasurementRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for line in synthetic_lines() {
        for i in 0..SYNTHETIC_MODELS_PER_BACKBONE {
            let mops: f64 = rng.random_range(2.0..120.0);
            let ops = (mops * 1e6).round() as u64;
            let truth = line.slope_ms_per_mop * (ops as f64 / 1e6) + line.intercept_ms;
            let latency_ms = truth * (1.0 + line.noise_frac * standard_normal(&mut rng));
            let power_mw = line.power_mw * (1.0 + 0.007 * standard_normal(&mut rng));
            rows.push(MeasurementRow {
                model_id: format!("{}_{i:03}", line.backbone_id),
                backbone_id: line.backbone_id.to_string(),
                mcu_id: line.mcu_id.to_string(),
                ops,
                latency_ms,
                power_mw: Some(power_mw),
            });
        }
    }
    rows
}

/// Box-Muller standard normal draw.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_line_is_recovered_exactly() {
        let rows: Vec<MeasurementRow> = [(1u64, 14.0), (10, 50.0), (25, 110.0), (50, 210.0)]
            .iter()
            .map(|&(mops, lat)| MeasurementRow {
                model_id: format!("m{mops}"),
                backbone_id: "bb".into(),
                mcu_id: "dev".into(),
                ops: mops * 1_000_000,
                latency_ms: lat,
                power_mw: None,
            })
            .collect();
        let (model, warnings) = fit_latency_model(&rows).unwrap();
        assert!((model.slope_ms_per_mop - 4.0).abs() < 1e-9);
        assert!((model.intercept_ms - 10.0).abs() < 1e-9);
        assert!((model.r_squared - 1.0).abs() < 1e-12);
        assert!(warnings.is_empty());
    }

    #[test]
    fn fit_matches_normal_equations_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<MeasurementRow> = (0..40)
            .map(|i| {
                let mops: f64 = rng.random_range(1.0..200.0);
                MeasurementRow {
                    model_id: format!("m{i}"),
                    backbone_id: "bb".into(),
                    mcu_id: "dev".into(),
                    ops: (mops * 1e6) as u64,
                    latency_ms: 3.1 * mops + 9.0 + rng.random_range(-4.0..4.0),
                    power_mw: None,
                }
            })
            .collect();
        let (model, _) = fit_latency_model(&rows).unwrap();
        // normal-equation oracle: solve [n, Σx; Σx, Σx²][b; a] = [Σy; Σxy]
        let n = rows.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for r in &rows {
            let x = r.ops as f64 / 1e6;
            sx += x;
            sy += r.latency_ms;
            sxx += x * x;
            sxy += x * r.latency_ms;
        }
        let det = n * sxx - sx * sx;
        let slope = (n * sxy - sx * sy) / det;
        let intercept = (sxx * sy - sx * sxy) / det;
        assert!((model.slope_ms_per_mop - slope).abs() < 1e-9);
        assert!((model.intercept_ms - intercept).abs() < 1e-9);
    }

    #[test]
    fn too_few_rows_and_degenerate_ops_are_errors() {
        let row = MeasurementRow {
            model_id: "a".into(),
            backbone_id: "bb".into(),
            mcu_id: "dev".into(),
            ops: 1_000_000,
            latency_ms: 10.0,
            power_mw: None,
        };
        assert!(matches!(
            fit_latency_model(&[row.clone(), row.clone()]),
            Err(HwError::NotEnoughRows(2))
        ));
        assert!(matches!(
            fit_latency_model(&[row.clone(), row.clone(), row]),
            Err(HwError::DegenerateOps)
        ));
    }

    #[test]
    fn mixed_groups_warn_and_are_excluded() {
        let mk = |backbone: &str, mops: u64, lat: f64| MeasurementRow {
            model_id: format!("{backbone}{mops}"),
            backbone_id: backbone.into(),
            mcu_id: "dev".into(),
            ops: mops * 1_000_000,
            latency_ms: lat,
            power_mw: None,
        };
        let rows = vec![
            mk("a", 1, 14.0),
            mk("a", 10, 50.0),
            mk("a", 25, 110.0),
            mk("b", 10, 500.0),
        ];
        let (model, warnings) = fit_latency_model(&rows).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!((model.slope_ms_per_mop - 4.0).abs() < 1e-9);
    }

    #[test]
    fn low_r_squared_warns_but_fits() {
        let mk = |mops: u64, lat: f64| MeasurementRow {
            model_id: format!("m{mops}"),
            backbone_id: "bb".into(),
            mcu_id: "dev".into(),
            ops: mops * 1_000_000,
            latency_ms: lat,
            power_mw: None,
        };
        let rows = vec![mk(1, 100.0), mk(10, 20.0), mk(25, 200.0), mk(50, 30.0)];
        let (_, warnings) = fit_latency_model(&rows).unwrap();
        assert!(warnings.iter().any(|w| w.contains("0.95")));
    }

    #[test]
    fn predict_is_line_evaluation_clamped_at_intercept() {
        let model = HwProxyModel {
            backbone_id: "bb".into(),
            mcu_id: "dev".into(),
            slope_ms_per_mop: 4.0,
            intercept_ms: 10.0,
            r_squared: 1.0,
            mean_power_mw: None,
            power_cv: None,
        };
        assert_eq!(predict_latency(&model, 0), 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let ops = rng.random_range(0..500_000_000u64);
            let expected = 4.0 * (ops as f64 / 1e6) + 10.0;
            assert_eq!(predict_latency(&model, ops), expected);
        }
    }

    #[test]
    fn prediction_is_monotone_for_nonnegative_slope() {
        let model = HwProxyModel {
            backbone_id: "bb".into(),
            mcu_id: "dev".into(),
            slope_ms_per_mop: 0.5,
            intercept_ms: 2.0,
            r_squared: 0.99,
            mean_power_mw: None,
            power_cv: None,
        };
        let mut prev = 0.0;
        for ops in (0..100).map(|i| i * 10_000_000) {
            let p = predict_latency(&model, ops);
            assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn energy_is_power_times_latency() {
        let model = HwProxyModel {
            backbone_id: "bb".into(),
            mcu_id: "dev".into(),
            slope_ms_per_mop: 0.0,
            intercept_ms: 1000.0,
            r_squared: 1.0,
            mean_power_mw: Some(300.0),
            power_cv: Some(0.01),
        };
        let e = estimate_energy(&model, 123).unwrap();
        assert_eq!(e.energy_mj, 300.0);
        assert!(!e.low_confidence);

        let mut noisy = model.clone();
        noisy.power_cv = Some(0.2);
        assert!(estimate_energy(&noisy, 1).unwrap().low_confidence);

        let mut unmeasured = model;
        unmeasured.mean_power_mw = None;
        assert!(matches!(estimate_energy(&unmeasured, 1), Err(HwError::MissingPower)));
    }

    #[test]
    fn energy_proportional_to_latency_under_constant_power() {
        let rows: Vec<MeasurementRow> = (1..=20)
            .map(|i| MeasurementRow {
                model_id: format!("m{i}"),
                backbone_id: "bb".into(),
                mcu_id: "dev".into(),
                ops: i * 5_000_000,
                latency_ms: 2.5 * (i as f64 * 5.0) + 7.0,
                power_mw: Some(250.0),
            })
            .collect();
        let (model, _) = fit_latency_model(&rows).unwrap();
        for r in &rows {
            let e = estimate_energy(&model, r.ops).unwrap();
            let ratio = e.energy_mj / predict_latency(&model, r.ops);
            assert!((ratio - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn builtin_profiles_cover_the_three_reference_devices() {
        let profiles = builtin_profiles();
        let srams: Vec<u64> = profiles.iter().map(|p| p.sram_bytes / 1024).collect();
        assert_eq!(srams, vec![128, 320, 512]);
        let flashes: Vec<u64> = profiles.iter().map(|p| p.flash_bytes / 1024).collect();
        assert_eq!(flashes, vec![512, 1024, 2048]);
    }

    #[test]
    fn profile_and_model_round_trips_are_identity() {
        let profiles = builtin_profiles();
        assert_eq!(load_profiles(&save_profiles(&profiles)).unwrap(), profiles);

        let rows = synthetic_measurements(1);
        let models: Vec<HwProxyModel> =
            calibrate_all(&rows).unwrap().into_iter().map(|(m, _)| m).collect();
        assert_eq!(load_models(&save_models(&models)).unwrap(), models);
    }

    #[test]
    fn csv_round_trip_and_row_numbered_rejection() {
        let rows = synthetic_measurements(2);
        let text = write_measurements_csv(&rows);
        assert_eq!(read_measurements_csv(&text).unwrap(), rows);

        let bad = "model_id,backbone_id,mcu_id,ops,latency_ms,power_mw\n\
                   a,bb,dev,1000,5.0,\n\
                   b,bb,dev,1000,-1.0,\n";
        match read_measurements_csv(bad) {
            Err(HwError::BadRow { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected row-numbered rejection, got {other:?}"),
        }
    }

    #[test]
    fn synthetic_rows_recover_their_documented_lines() {
        let rows = synthetic_measurements(42);
        for line in synthetic_lines() {
            let group: Vec<MeasurementRow> = rows
                .iter()
                .filter(|r| r.backbone_id == line.backbone_id)
                .cloned()
                .collect();
            assert_eq!(group.len(), SYNTHETIC_MODELS_PER_BACKBONE);
            let (model, warnings) = fit_latency_model(&group).unwrap();
            assert!(warnings.is_empty());
            let rel = (model.slope_ms_per_mop - line.slope_ms_per_mop).abs() / line.slope_ms_per_mop;
            assert!(rel < 0.02, "slope off by {rel}");
            assert!(model.r_squared > 0.95);
            assert!(model.power_cv.unwrap() < 0.05);
        }
    }
}
