//! Bundled reference data so calibration, estimation and the test suites
//! run fully offline: the six published keyword-spotting / anomaly-detection
//! MCU architectures, their measured reference points on the medium device,
//! a search-space backbone, and a synthetic measurement set.

use crate::hw::{synthetic_measurements, write_measurements_csv, MeasurementRow};
use crate::supernet::ArchDoc;

pub const KWS_S_JSON: &str = include_str!("../fixtures/kws_s.json");
pub const KWS_M_JSON: &str = include_str!("../fixtures/kws_m.json");
pub const KWS_L_JSON: &str = include_str!("../fixtures/kws_l.json");
pub const AD_S_JSON: &str = include_str!("../fixtures/ad_s.json");
pub const AD_M_JSON: &str = include_str!("../fixtures/ad_m.json");
pub const AD_L_JSON: &str = include_str!("../fixtures/ad_l.json");
/// A keyword-spotting search space: stem width in {84, 112, 140} plus five
/// depthwise-separable blocks with widths in {84, 112, 140, 196}.
pub const KWS_BACKBONE_JSON: &str = include_str!("../fixtures/kws_backbone.json");

/// Every bundled architecture as `(name, json)`.
pub fn bundled_arch_json() -> Vec<(&'static str, &'static str)> {
    vec![
        ("kws_s", KWS_S_JSON),
        ("kws_m", KWS_M_JSON),
        ("kws_l", KWS_L_JSON),
        ("ad_s", AD_S_JSON),
        ("ad_m", AD_M_JSON),
        ("ad_l", AD_L_JSON),
    ]
}

pub fn bundled_arch(name: &str) -> Option<ArchDoc> {
    bundled_arch_json()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, json)| ArchDoc::from_json(json).expect("bundled docs parse"))
}

/// Published reference figures for the three keyword-spotting models on
/// the medium device (STM32F746ZG): op count, end-to-end latency, energy
/// per inference, plus the reported model totals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KwsReferencePoint {
    pub name: &'static str,
    pub mops: f64,
    pub latency_ms: f64,
    pub energy_mj: f64,
    pub flash_kb: f64,
    pub sram_kb: f64,
}

pub fn kws_reference_points() -> [KwsReferencePoint; 3] {
    [
        KwsReferencePoint {
            name: "kws_s",
            mops: 16.4,
            latency_ms: 109.0,
            energy_mj: 48.6,
            flash_kb: 102.0,
            sram_kb: 53.2,
        },
        KwsReferencePoint {
            name: "kws_m",
            mops: 30.6,
            latency_ms: 187.0,
            energy_mj: 83.16,
            flash_kb: 163.0,
            sram_kb: 103.3,
        },
        KwsReferencePoint {
            name: "kws_l",
            mops: 129.0,
            latency_ms: 610.0,
            energy_mj: 274.32,
            flash_kb: 612.0,
            sram_kb: 208.8,
        },
    ]
}

/// Seed behind the bundled synthetic calibration CSV.
pub const MEASUREMENT_FIXTURE_SEED: u64 = 42;

/// The bundled synthetic measurement rows (two backbones, one device,
/// 200 models each; see `hw::synthetic_lines` for the ground truth).
pub fn bundled_measurements() -> Vec<MeasurementRow> {
    synthetic_measurements(MEASUREMENT_FIXTURE_SEED)
}

/// CSV form of [`bundled_measurements`], byte-identical to
/// `fixtures/measurements.csv`.
pub fn bundled_measurements_csv() -> String {
    write_measurements_csv(&bundled_measurements())
}

/// Reference toy search run config consumed by the command-line tool.
pub const TOY_SEARCH_JSON: &str = include_str!("../fixtures/toy_search.json");

/// Compact machine-ID classifier for the anomaly-detection pipeline.
pub fn default_ad_classifier(machine_ids: usize) -> ArchDoc {
    use crate::supernet::ArchLayer;
    use crate::tensor::Padding;
    ArchDoc {
        name: Some("ad_classifier".into()),
        input_shape: crate::tasks::AD_SHAPE,
        layers: vec![
            ArchLayer::Conv2D { h: 3, w: 3, c: 8, s: 2, padding: Padding::Same },
            ArchLayer::DepthwiseSeparableBlock { h: 3, w: 3, c: 16, s: 2, padding: Padding::Same },
            ArchLayer::GlobalAvgPool,
            ArchLayer::FC { c: machine_ids as u32 },
        ],
    }
}
