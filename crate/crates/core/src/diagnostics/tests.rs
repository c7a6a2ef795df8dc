use std::collections::BTreeSet;

use super::*;
use crate::diffcore::Tensor;
use crate::env::EnvConfig;
use crate::policy::ModelConfig;
use crate::rng::stream;
use crate::trainers::{Algorithm, TrainConfig};
use crate::transfer::{aggregate_curves, run_transfer, Arm, RunOptions, TransferPlan};

const UP: usize = 0;
const DOWN: usize = 1;
const RIGHT: usize = 3;

/// Linear policy (no hidden layers) with hand-set logits.
fn linear_model(spec: &GridSpec, d: usize, bias: [f64; 4], z_weights: &[(usize, usize, f64)]) -> PolicyModel {
    let cfg = ModelConfig {
        obs_dim: spec.size * spec.size,
        action_count: 4,
        latent_dim: d,
        hidden: vec![],
        recog_hidden: vec![],
        value_head: false,
        recognition: false,
    };
    let mut m = PolicyModel::new(cfg, &mut stream(0, "init"));
    m.params.insert("pi.out.b", Tensor::vector(bias.to_vec()));
    let w = m.params.get_mut("pi.out.w").unwrap();
    for &(zi, a, v) in z_weights {
        w.data_mut()[(spec.size * spec.size + zi) * 4 + a] = v;
    }
    m
}

fn corridor() -> GridSpec {
    GridSpec::new("line", 6, BTreeSet::new(), (0, 0), (0, 5)).unwrap()
}

#[test]
fn straight_walk_heatmap() {
    let spec = corridor();
    let mut bias = [0.0; 4];
    bias[RIGHT] = 60.0;
    let model = linear_model(&spec, 2, bias, &[]);
    let maps = visitation_heatmaps(&spec, &model, 1, 1, PolicyMode::Greedy, &mut stream(1, "h")).unwrap();
    let h = &maps[0];
    assert_eq!(h.total(), 6);
    for c in 0..6 {
        assert_eq!(h.get((0, c)), 1);
    }
    assert_eq!(h.counts.iter().filter(|&&n| n == 1).count(), 6);
}

#[test]
fn sixteen_maps_with_zero_wall_counts_and_exact_totals() {
    let spec = GridSpec::builtin("grid6", 10).unwrap().with_max_steps(40);
    let mut cfg = ModelConfig::new(100, 4);
    cfg.hidden = vec![8];
    let model = PolicyModel::new(cfg, &mut stream(3, "init"));
    let maps = visitation_heatmaps(&spec, &model, 16, 3, PolicyMode::Sampled, &mut stream(2, "h")).unwrap();
    assert_eq!(maps.len(), 16);
    for h in &maps {
        for &w in &spec.walls {
            assert_eq!(h.get(w), 0);
        }
        assert!(h.total() <= 3 * (spec.max_steps as u64 + 1));
    }
    // replay the same stream and count cells by hand
    let mut rng = stream(2, "h");
    let prior = model.prior();
    let mut expected = 0;
    for _ in 0..16 {
        let z = prior.sample(&mut rng);
        for _ in 0..3 {
            expected += rollout_cells(&spec, &model, &z, PolicyMode::Sampled, &mut rng)
                .unwrap()
                .len() as u64;
        }
    }
    assert_eq!(maps.iter().map(Heatmap::total).sum::<u64>(), expected);
}

#[test]
fn z_blind_model_has_no_diversity() {
    let spec = GridSpec::builtin("grid1", 6).unwrap();
    let mut bias = [0.0; 4];
    bias[DOWN] = 5.0;
    let model = linear_model(&spec, 2, bias, &[]);
    let r = diversity_report(&spec, &model, 16, &mut stream(5, "d")).unwrap();
    assert_eq!(r.distinct_greedy_trajectories, 1);
    assert_eq!(r.mean_pairwise_distance, 0.0);
    assert_eq!(r.goal_reach_fraction, 0.0);
    let single = diversity_report(&spec, &model, 1, &mut stream(5, "d")).unwrap();
    assert_eq!(single.distinct_greedy_trajectories, 1);
    assert_eq!(single.mean_pairwise_distance, 0.0);
}

#[test]
fn latent_switches_route() {
    let spec = GridSpec::builtin("grid1", 6).unwrap();
    // z0 > 0 prefers right, z0 < 0 prefers down; a weak bias breaks the
    // tie at the far wall so both routes finish at the goal
    let model = linear_model(&spec, 2, [0.0; 4], &[(0, RIGHT, 40.0), (0, DOWN, -40.0)]);
    let r = diversity_report(&spec, &model, 16, &mut stream(6, "d")).unwrap();
    assert_eq!(r.distinct_greedy_trajectories, 2);
    assert!(r.mean_pairwise_distance > 0.0);
    let again = diversity_report(&spec, &model, 16, &mut stream(6, "d")).unwrap();
    assert_eq!(r, again);
}

#[test]
fn greedy_trajectory_stops_at_repeat() {
    let spec = corridor();
    let mut bias = [0.0; 4];
    bias[UP] = 10.0;
    let model = linear_model(&spec, 1, bias, &[]);
    assert_eq!(greedy_trajectory(&spec, &model, &[0.0]).unwrap(), vec![(0, 0)]);
}

#[test]
fn edit_distances() {
    assert_eq!(edit_distance(b"kitten", b"sitting"), 3);
    assert_eq!(edit_distance::<u8>(b"", b"abc"), 3);
    assert_eq!(normalized_edit_distance(b"abc", b"abc"), 0.0);
    assert_eq!(normalized_edit_distance(b"ab", b"cd"), 1.0);
    assert_eq!(normalized_edit_distance::<u8>(b"", b""), 0.0);
}

#[test]
fn heatmap_exports() {
    let spec = GridSpec::builtin("grid2", 6).unwrap();
    let empty = Heatmap::empty(6, vec![0.0], PolicyMode::Sampled);
    let ppm = heatmap_ppm(&empty, &spec, 3);
    let header = b"P6\n18 18\n255\n";
    assert_eq!(&ppm[..header.len()], header);
    assert_eq!(ppm.len(), header.len() + 18 * 18 * 3);
    let pixels = &ppm[header.len()..];
    let background: BTreeSet<[u8; 3]> = (0..6)
        .flat_map(|r| (0..6).map(move |c| (r, c)))
        .filter(|&p| !spec.is_wall(p) && p != spec.start && p != spec.goal)
        .map(|(r, c)| {
            let i = ((r * 3) * 18 + c * 3) * 3;
            [pixels[i], pixels[i + 1], pixels[i + 2]]
        })
        .collect();
    assert_eq!(background.len(), 1);
    assert_eq!(heatmap_csv(&empty), "0,0,0,0,0,0\n".repeat(6));

    let mut h = empty.clone();
    h.counts[7] = 12;
    h.counts[35] = 1;
    let parsed = parse_heatmap_csv(&heatmap_csv(&h)).unwrap();
    assert_eq!(parsed.concat(), h.counts);

    let dir = tempfile::tempdir().unwrap();
    let (csv, ppm_path) = export_heatmap(&h, &spec, dir.path(), 4, 2).unwrap();
    assert!(csv.ends_with("heatmap_z4.csv") && ppm_path.ends_with("heatmap_z4.ppm"));
    assert_eq!(std::fs::read(&ppm_path).unwrap(), heatmap_ppm(&h, &spec, 2));
}

fn parse_svg(svg: &str) -> (usize, usize, Vec<String>) {
    let doc = roxmltree::Document::parse(svg).expect("well-formed svg");
    let count = |tag: &str| doc.descendants().filter(|n| n.has_tag_name(tag)).count();
    let polygons = doc
        .descendants()
        .filter(|n| n.has_tag_name("polygon"))
        .map(|n| n.attribute("points").unwrap().to_string())
        .collect();
    (count("polyline"), count("polygon"), polygons)
}

#[test]
fn svg_structure() {
    let a = aggregate_curves(&[vec![0.0, 0.5, 0.7], vec![0.2, 0.3, 0.9]], 1).unwrap();
    let b = aggregate_curves(&[vec![-0.3, 0.1, 0.2]], 1).unwrap();
    let svg = curves_svg(
        "grid7 & <reinforce>",
        &[("vf".into(), a), ("scratch".into(), b.clone())],
    )
    .unwrap();
    let (lines, bands, _) = parse_svg(&svg);
    assert_eq!((lines, bands), (2, 2));
    assert!(svg.contains("updates") && svg.contains("mean cumulative reward"));

    // zero std collapses the band onto the line
    let single = curves_svg("one", &[("s".into(), b)]).unwrap();
    let (_, _, polys) = parse_svg(&single);
    let pts: Vec<&str> = polys[0].split(' ').collect();
    let n = pts.len() / 2;
    let forward: Vec<&str> = pts[..n].to_vec();
    let mut backward: Vec<&str> = pts[n..].to_vec();
    backward.reverse();
    assert_eq!(forward, backward);
    assert!(curves_svg("none", &[]).is_err());
}

#[test]
fn panels_from_transfer_directory() {
    let small = |n| TrainConfig {
        algorithm: Algorithm::Reinforce,
        episodes_per_update: 2,
        n_parallel_envs: 1,
        k: 4,
        m: 2,
        total_updates: n,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    let plan = TransferPlan {
        source: EnvConfig::grid("grid1", 6, Some(10)),
        targets: vec![EnvConfig::grid("grid2", 6, Some(10))],
        model: crate::policy::ModelSpec {
            latent_dim: 2,
            hidden: vec![4],
            recog_hidden: vec![3],
        },
        source_train: small(2),
        target_train: small(3),
        retrain_algorithms: vec![Algorithm::Reinforce, Algorithm::VfuncReinforce],
        arms: Arm::ALL.to_vec(),
        seeds: vec![1, 2],
        threshold: 0.5,
        window: 2,
    };
    let dir = tempfile::tempdir().unwrap();
    run_transfer(&plan, dir.path(), &RunOptions::default()).unwrap();
    let panels = transfer_panels(dir.path()).unwrap();
    assert_eq!(panels.len(), 2);
    assert_eq!(panels[0].name, "grid2_reinforce");
    assert_eq!(panels[1].name, "grid2_vfunc-reinforce");
    for p in &panels {
        assert_eq!(p.curves.len(), 3);
        assert!(p.curves.iter().all(|(_, c)| c.n_seeds == 2 && c.mean.len() == 3));
    }
}
