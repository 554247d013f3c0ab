use super::*;
use crate::fixtures;
use crate::tensor::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stem width decision, optional downsampling DS block, inverted
/// bottleneck with expansion decision: 4 decisions, 16 architectures.
pub(crate) const TOY_BACKBONE: &str = r#"{
  "input_shape": [8, 8, 1],
  "layers": [
    {"kind": "Conv2D", "kernel": [3, 3], "stride": 1, "channels": {"options": [2, 4]}},
    {"kind": "DepthwiseSeparableBlock", "kernel": [3, 3], "stride": 2,
     "channels": {"options": [2, 4]}, "optional_depth": true},
    {"kind": "InvertedBottleneckBlock", "kernel": [3, 3], "stride": 1,
     "channels": {"fixed": 4}, "expansion": {"options": [4, 8]}}
  ],
  "head": {"classes": 3, "pool": "global"}
}"#;

pub(crate) fn one_hot_z(
    tape: &mut Tape,
    supernet: &Supernet,
    selection: &ArchSelection,
) -> Vec<crate::tensor::TensorId> {
    supernet
        .decisions
        .iter()
        .map(|d| {
            let mut row = vec![0.0; d.num_options()];
            row[selection.option_index(&d.id)] = 1.0;
            tape.constant(row, vec![d.num_options()]).unwrap()
        })
        .collect()
}

fn rand_input(rng: &mut ChaCha8Rng, supernet: &Supernet, batch: usize) -> Vec<f64> {
    let [h, w, c] = supernet.input_shape;
    (0..batch * h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect()
}

// ── parsing ──────────────────────────────────────────────────────────

#[test]
fn kws_style_backbone_parses_with_six_decisions() {
    let sn = parse_backbone_config(fixtures::KWS_BACKBONE_JSON).unwrap();
    assert_eq!(sn.decisions.len(), 6);
    assert_eq!(sn.architecture_count(), Some(3 * 4 * 4 * 4 * 4 * 4));
    assert_eq!(sn.num_classes, 12);
}

#[test]
fn input_to_fc_config_has_zero_decisions() {
    let sn = parse_backbone_config(
        r#"{"input_shape": [4, 4, 1], "layers": [], "head": {"classes": 2, "pool": "flatten"}}"#,
    )
    .unwrap();
    assert!(sn.decisions.is_empty());
    assert_eq!(sn.architecture_count(), Some(1));
}

#[test]
fn off_grid_channel_option_is_rejected() {
    let err = parse_backbone_config(
        r#"{
          "input_shape": [8, 8, 1],
          "channel_grid": 4,
          "layers": [{"kind": "Conv2D", "kernel": [3, 3], "channels": {"options": [84, 85]}}],
          "head": {"classes": 2}
        }"#,
    )
    .unwrap_err();
    assert!(matches!(err, SupernetError::GridViolation { value: 85, grid: 4, .. }));
}

#[test]
fn non_increasing_options_are_rejected() {
    let err = parse_backbone_config(
        r#"{
          "input_shape": [8, 8, 1],
          "layers": [{"kind": "Conv2D", "kernel": [3, 3], "channels": {"options": [8, 8]}}],
          "head": {"classes": 2}
        }"#,
    )
    .unwrap_err();
    assert!(matches!(err, SupernetError::BadOptions { .. }));
}

#[test]
fn optional_depth_requires_matching_max_channels() {
    let err = parse_backbone_config(
        r#"{
          "input_shape": [8, 8, 2],
          "layers": [{"kind": "Conv2D", "kernel": [3, 3], "channels": {"fixed": 6}, "optional_depth": true}],
          "head": {"classes": 2}
        }"#,
    )
    .unwrap_err();
    assert!(matches!(err, SupernetError::DepthChannelMismatch { inp: 2, out: 6, .. }));
}

#[test]
fn add_skip_must_reference_an_earlier_layer() {
    let err = parse_backbone_config(
        r#"{
          "input_shape": [8, 8, 2],
          "layers": [{"kind": "AddSkip", "from": 0}],
          "head": {"classes": 2}
        }"#,
    )
    .unwrap_err();
    assert!(matches!(err, SupernetError::BadSkipRef { from: 0, .. }));
}

#[test]
fn schema_violations_are_reported() {
    assert!(matches!(
        parse_backbone_config(r#"{"input_shape": [8, 8]}"#),
        Err(SupernetError::Schema(_))
    ));
    assert!(matches!(
        parse_backbone_config(
            r#"{"input_shape": [8,8,1], "layers": [], "head": {"classes": 2}, "bogus": 1}"#
        ),
        Err(SupernetError::Schema(_))
    ));
}

// ── enumeration ──────────────────────────────────────────────────────

#[test]
fn enumeration_counts_and_order() {
    let sn = parse_backbone_config(
        r#"{
          "input_shape": [8, 8, 1],
          "layers": [
            {"kind": "Conv2D", "kernel": [3, 3], "channels": {"options": [2, 4]}},
            {"kind": "Conv2D", "kernel": [3, 3], "channels": {"options": [2, 4, 6]}}
          ],
          "head": {"classes": 2}
        }"#,
    )
    .unwrap();
    let all: Vec<ArchSelection> = enumerate_architectures(&sn, None).unwrap().collect();
    assert_eq!(all.len(), 6);
    // last decision varies fastest
    assert_eq!(all[0].option_index("L1.width"), 0);
    assert_eq!(all[1].option_index("L1.width"), 1);
    assert_eq!(all[3].option_index("L0.width"), 1);
    // exactly once each
    let mut seen = all.clone();
    seen.dedup();
    assert_eq!(seen.len(), 6);
}

#[test]
fn empty_decision_space_yields_one_selection() {
    let sn = parse_backbone_config(
        r#"{"input_shape": [4, 4, 1], "layers": [], "head": {"classes": 2, "pool": "flatten"}}"#,
    )
    .unwrap();
    let all: Vec<_> = enumerate_architectures(&sn, None).unwrap().collect();
    assert_eq!(all.len(), 1);
    assert!(all[0].choices.is_empty());
}

#[test]
fn enumeration_cap_is_enforced() {
    let sn = parse_backbone_config(TOY_BACKBONE).unwrap();
    assert!(matches!(
        enumerate_architectures(&sn, Some(8)),
        Err(SupernetError::EnumerationCapExceeded { count: 16, cap: 8 })
    ));
}

#[test]
fn enumeration_count_matches_product_of_options() {
    for (layers, expect) in [
        (r#"[{"kind": "Conv2D", "kernel": [3,3], "channels": {"options": [2,4,6,8]}}]"#, 4u64),
        (
            r#"[{"kind": "Conv2D", "kernel": [3,3], "channels": {"options": [2,4]}},
                {"kind": "DepthwiseSeparableBlock", "kernel": [3,3], "channels": {"options": [2,4]}, "optional_depth": true}]"#,
            8,
        ),
    ] {
        let sn = parse_backbone_config(&format!(
            r#"{{"input_shape": [8,8,1], "layers": {layers}, "head": {{"classes": 2}}}}"#
        ))
        .unwrap();
        let n = enumerate_architectures(&sn, None).unwrap().count() as u64;
        assert_eq!(n, expect);
        assert_eq!(sn.architecture_count(), Some(expect));
    }
}

// ── forward semantics ────────────────────────────────────────────────

#[test]
fn one_hot_forward_equals_materialized_for_every_selection() {
    let sn = parse_backbone_config(TOY_BACKBONE).unwrap();
    let model = SupernetModel::init(sn, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for selection in enumerate_architectures(&model.supernet, None).unwrap() {
        let net = materialize(&model, &selection).unwrap();
        for _ in 0..3 {
            let input = rand_input(&mut rng, &model.supernet, 2);
            let mut t1 = Tape::new();
            let z = one_hot_z(&mut t1, &model.supernet, &selection);
            let fw = model.forward(&mut t1, &input, 2, &z).unwrap();
            let mut t2 = Tape::new();
            let dfw = net.forward(&mut t2, &input, 2, None).unwrap();
            let a = t1.values(fw.logits);
            let b = t2.values(dfw.logits);
            assert_eq!(t1.shape(fw.logits).dims, vec![2, 3]);
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-6, "selection {selection:?}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn uniform_z_averages_the_masked_branch_evaluations() {
    // single width decision followed by affine-only processing, so the
    // combined output is exactly the average of the two one-hot outputs
    let sn = parse_backbone_config(
        r#"{
          "input_shape": [6, 6, 1],
          "layers": [{"kind": "Conv2D", "kernel": [3, 3], "channels": {"options": [2, 4]}}],
          "head": {"classes": 2, "pool": "global"}
        }"#,
    )
    .unwrap();
    let model = SupernetModel::init(sn, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input = rand_input(&mut rng, &model.supernet, 2);

    let logits_for = |weights: Vec<f64>| {
        let mut tape = Tape::new();
        let z = vec![tape.constant(weights, vec![2]).unwrap()];
        let fw = model.forward(&mut tape, &input, 2, &z).unwrap();
        tape.values(fw.logits).to_vec()
    };
    let narrow = logits_for(vec![1.0, 0.0]);
    let wide = logits_for(vec![0.0, 1.0]);
    let mixed = logits_for(vec![0.5, 0.5]);
    for i in 0..mixed.len() {
        let avg = 0.5 * (narrow[i] + wide[i]);
        assert!((mixed[i] - avg).abs() < 1e-6, "{} vs {}", mixed[i], avg);
    }
}

#[test]
fn skip_selection_materializes_to_pooled_passthrough() {
    let sn = parse_backbone_config(TOY_BACKBONE).unwrap();
    let model = SupernetModel::init(sn, 5);
    // widest stem, skip the downsampling block, narrow expansion
    let mut sel = crate::resources::max_selection(&model.supernet);
    sel.choices.insert("L1.depth".into(), 0);
    let net = materialize(&model, &sel).unwrap();
    // the skipped stride-2 block leaves average pooling behind and none of
    // its convolutions survive (the inverted bottleneck's do)
    assert!(net
        .doc
        .layers
        .iter()
        .any(|l| matches!(l, ArchLayer::AvgPool { h: 2, w: 2, s: 2, .. })));
    assert!(!net
        .ops
        .iter()
        .any(|op| matches!(op, DiscreteOp::Conv { label, .. } if label.starts_with("L1."))));
}

#[test]
fn skip_everything_reduces_to_stem_and_head() {
    let sn = parse_backbone_config(
        r#"{
          "input_shape": [8, 8, 1],
          "layers": [
            {"kind": "Conv2D", "kernel": [3, 3], "channels": {"fixed": 4}},
            {"kind": "DepthwiseSeparableBlock", "kernel": [3, 3], "channels": {"fixed": 4}, "optional_depth": true},
            {"kind": "DepthwiseSeparableBlock", "kernel": [3, 3], "channels": {"fixed": 4}, "optional_depth": true}
          ],
          "head": {"classes": 2, "pool": "global"}
        }"#,
    )
    .unwrap();
    let model = SupernetModel::init(sn, 11);
    let sel = crate::resources::min_selection(&model.supernet);
    let net = materialize(&model, &sel).unwrap();
    assert_eq!(
        net.doc.layers,
        vec![
            ArchLayer::Conv2D { h: 3, w: 3, c: 4, s: 1, padding: Padding::Same },
            ArchLayer::GlobalAvgPool,
            ArchLayer::FC { c: 2 },
        ]
    );
}

#[test]
fn max_width_materialization_keeps_every_parameter() {
    let sn = parse_backbone_config(TOY_BACKBONE).unwrap();
    let model = SupernetModel::init(sn, 13);
    let sel = crate::resources::max_selection(&model.supernet);
    let net = materialize(&model, &sel).unwrap();
    let supernet_total: usize = model.params.iter().map(|p| p.elem_count()).sum();
    assert_eq!(net.param_count(), supernet_total);
}

#[test]
fn arch_doc_round_trip_is_identity() {
    for (_, json) in fixtures::bundled_arch_json() {
        let doc = ArchDoc::from_json(json).unwrap();
        let again = ArchDoc::from_json(&doc.to_json()).unwrap();
        assert_eq!(doc, again);
    }
    // and for generated documents
    let sn = parse_backbone_config(TOY_BACKBONE).unwrap();
    for sel in enumerate_architectures(&sn, None).unwrap() {
        let doc = sn.to_arch_doc(&sel).unwrap();
        assert_eq!(ArchDoc::from_json(&doc.to_json()).unwrap(), doc);
    }
}

#[test]
fn materialized_selection_doc_matches_reference_vocabulary() {
    let sn = parse_backbone_config(fixtures::KWS_BACKBONE_JSON).unwrap();
    let mut sel = ArchSelection::empty();
    for (d, k) in [
        ("L0.width", 2usize), // 140
        ("L1.width", 2),      // 140
        ("L2.width", 2),      // 140
        ("L3.width", 2),      // 140
        ("L4.width", 1),      // 112
        ("L5.width", 3),      // 196
    ] {
        sel.choices.insert(d.into(), k);
    }
    let doc = sn.to_arch_doc(&sel).unwrap();
    let reference = fixtures::bundled_arch("kws_m").unwrap();
    assert_eq!(doc.layers, reference.layers);
}

#[test]
fn quantized_training_forward_builds_and_observes_ranges() {
    let sn = parse_backbone_config(TOY_BACKBONE).unwrap();
    let model = SupernetModel::init(sn, 17);
    let sel = crate::resources::max_selection(&model.supernet);
    let net = materialize(&model, &sel).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input = rand_input(&mut rng, &model.supernet, 2);
    let q = QuantState::init(&net, QuantConfig { bits: 8 }, &input, 2).unwrap();
    // input pair + (sym, lo, hi) per conv + classifier sym
    let convs = net
        .ops
        .iter()
        .filter(|o| matches!(o, DiscreteOp::Conv { .. }))
        .count();
    assert_eq!(q.values.len(), 2 + 3 * convs + 1);
    let mut tape = Tape::new();
    let fw = net.forward(&mut tape, &input, 2, Some(&q)).unwrap();
    assert!(tape.has_ste_ops());
    assert_eq!(fw.range_leaves.len(), q.values.len());
    // quantized logits stay finite and close to the unquantized ones
    let mut plain = Tape::new();
    let pfw = net.forward(&mut plain, &input, 2, None).unwrap();
    for (a, b) in tape.values(fw.logits).iter().zip(plain.values(pfw.logits)) {
        assert!((a - b).abs() < 0.5, "quantized {a} vs plain {b}");
    }
}
