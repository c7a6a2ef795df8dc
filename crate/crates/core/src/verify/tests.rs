use std::collections::BTreeSet;

use super::*;
use crate::diffcore::Tensor;
use crate::env::layouts::BUILTIN_IDS;
use crate::env::multiroom::Room;
use crate::env::{GridSpec, Heading, MultiRoomSpec};
use crate::policy::{ModelConfig, PolicyModel};
use crate::rng::stream;

#[test]
fn suite_names_round_trip() {
    for s in Suite::ALL {
        assert_eq!(Suite::parse(s.as_str()), Some(s));
    }
    assert_eq!(Suite::parse("nope"), None);
}

#[test]
fn gradcheck_passes_every_group() {
    let r = gradcheck(11);
    assert_eq!(r.groups.len(), 6);
    for g in &r.groups {
        assert!(g.passed, "{g:?}");
        assert!(g.checked > 0);
    }
}

#[test]
fn bfs_on_hand_grids() {
    let open = GridSpec::new("open", 6, BTreeSet::new(), (0, 0), (5, 5)).unwrap();
    assert_eq!(grid_bfs_len(&open), Some(10));
    // a wall along column 2 with a gap in the bottom row forces a detour
    let walls: BTreeSet<_> = (0..5).map(|r| (r, 2)).collect();
    let detour = GridSpec::new("detour", 6, walls, (0, 0), (0, 5)).unwrap();
    assert_eq!(grid_bfs_len(&detour), Some(15));
    assert_eq!(grid_bfs_len(&detour), detour.shortest_path_len());
}

fn two_room_spec() -> MultiRoomSpec {
    // rooms side by side sharing column 3; the door sits at (1, 3)
    let spec = MultiRoomSpec::generate(2, 4, 0).unwrap();
    let mut text: serde_json::Value = serde_json::from_str(&spec.to_json()).unwrap();
    text["rooms"] = serde_json::to_value([
        Room {
            top: 0,
            left: 0,
            size: 4,
        },
        Room {
            top: 0,
            left: 3,
            size: 4,
        },
    ])
    .unwrap();
    text["height"] = 4.into();
    text["width"] = 7.into();
    text["doors"] = serde_json::json!([[1, 3]]);
    text["agent_start"] = serde_json::json!([1, 1]);
    text["start_heading"] = serde_json::json!("W");
    text["goal"] = serde_json::json!([2, 5]);
    text["max_steps"] = 100.into();
    MultiRoomSpec::from_json(&text.to_string()).unwrap()
}

#[test]
fn door_aware_bfs_counts_turns_and_toggle() {
    let spec = two_room_spec();
    // turn twice to face east, move to (1,2), toggle, walk through the
    // door to (1,5), turn right, step down to the goal: 2 + 1 + 1 + 3 + 1 + 1
    assert_eq!(multiroom_bfs_len(&spec), Some(9));
    assert_eq!(spec.start_heading, Heading::W);
}

#[test]
fn env_oracle_small_sweep() {
    let r = env_oracle(60, 3);
    assert!(r.passed(), "{r:?}");
    assert_eq!(r.grids.len(), envs::GRID_SIZES.len() * BUILTIN_IDS.len());
    assert!(r.worst_path_fraction > 0.0 && r.worst_path_fraction <= 1.0);
}

/// Policy whose logits ignore the latent: labels are independent across
/// inputs, so the exact entropy is a sum of per-input entropies.
#[test]
fn exact_entropy_of_latent_blind_policy() {
    let cfg = ModelConfig {
        obs_dim: 3,
        action_count: 2,
        latent_dim: 2,
        hidden: vec![],
        recog_hidden: vec![4],
        value_head: false,
        recognition: true,
    };
    let mut m = PolicyModel::new(cfg, &mut stream(0, "init"));
    let w = vec![0.3, -0.3, 1.0, 0.0, -2.0, 0.5, 0.0, 0.0, 0.0, 0.0];
    m.params.insert("pi.out.w", Tensor::new(vec![5, 2], w).unwrap());
    m.params.insert("pi.out.b", Tensor::vector(vec![0.0, 0.0]));
    let inputs: Vec<Vec<f64>> = (0..3)
        .map(|i| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let bern = |gap: f64| {
        let p = 1.0 / (1.0 + (-gap).exp());
        -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
    };
    let expected = bern(0.6) + bern(1.0) + bern(2.5);
    let h = exact_partial_function_entropy(&m, &inputs, 41, 7.0).unwrap();
    assert!((h - expected).abs() < 1e-9, "{h} vs {expected}");
}

#[test]
fn exact_entropy_of_latent_copy_policy() {
    // the label is the sign of z0 at every input, so the three labels are
    // one fair coin: H = ln 2. An even node count keeps z = 0, where all
    // eight labelings tie, off the grid.
    let cfg = ModelConfig {
        obs_dim: 3,
        action_count: 2,
        latent_dim: 1,
        hidden: vec![],
        recog_hidden: vec![4],
        value_head: false,
        recognition: true,
    };
    let mut m = PolicyModel::new(cfg, &mut stream(0, "init"));
    let w = vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 4000.0, -4000.0];
    m.params.insert("pi.out.w", Tensor::new(vec![4, 2], w).unwrap());
    m.params.insert("pi.out.b", Tensor::vector(vec![0.0, 0.0]));
    let inputs: Vec<Vec<f64>> = (0..3)
        .map(|i| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let h = exact_partial_function_entropy(&m, &inputs, 2000, 7.0).unwrap();
    assert!((h - 2f64.ln()).abs() < 1e-3, "{h}");
}

#[test]
fn entropy_oracle_quick() {
    let cfg = EntropyOracleConfig {
        random_params: 4,
        train_steps: 60,
        estimate_m: 1500,
        grid_points: 121,
        ..EntropyOracleConfig::default()
    };
    let r = entropy_oracle(&cfg, 5);
    assert_eq!(r.cases.len(), 5);
    assert!(r.passed(), "{r:?}");
    for c in &r.cases {
        assert!(c.exact_h > 0.0 && c.exact_h <= 3.0 * 2f64.ln() + 1e-9);
    }
}
