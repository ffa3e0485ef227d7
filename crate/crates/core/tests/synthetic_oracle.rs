//! Tracker and refinement checked against synthetic ground truth.

use flowlabel::geometry::{iou_bev, IouKind};
use flowlabel::pipeline::fused_detection_labels;
use flowlabel::scene::prepare_scene;
use flowlabel::simeval::{overall_pr, simulate, NoiseSpec, ObjectSpec, ScenarioSpec, SimulatedSequence};
use flowlabel::tracker::{predict, run_sequence, StateSource};
use flowlabel::{label_sequence, ObjectClass, PipelineConfig, Track};

const CAR: [f64; 3] = [4.5, 1.9, 1.6];

fn scenario(objects: Vec<ObjectSpec>, frames: usize, noise: NoiseSpec, seed: u64) -> SimulatedSequence {
    let spec = ScenarioSpec {
        duration: frames,
        objects,
        noise,
        ..ScenarioSpec::default()
    };
    simulate(&spec, seed).unwrap()
}

/// Ground-truth id each detection-assigned state overlaps best.
fn gt_ids(track: &Track, sim: &SimulatedSequence) -> Vec<u64> {
    track
        .states
        .iter()
        .filter(|s| s.source == StateSource::DetectionAssigned)
        .map(|s| {
            let frame = &sim.ground_truth.frames[s.frame];
            frame
                .objects
                .iter()
                .max_by(|a, b| iou_bev(&a.bbox, &s.bbox).total_cmp(&iou_bev(&b.bbox, &s.bbox)))
                .map(|o| o.id)
                .unwrap()
        })
        .collect()
}

#[test]
fn two_objects_with_dropout_keep_identities() {
    let noise = NoiseSpec {
        dropout: 0.2,
        ..NoiseSpec::noiseless()
    };
    let sim = scenario(
        vec![
            ObjectSpec::moving(ObjectClass::Vehicle, CAR, [10.0, -4.0], [4.0, 0.0]),
            ObjectSpec::moving(ObjectClass::Vehicle, CAR, [14.0, 5.0], [2.5, 0.5]),
        ],
        40,
        noise,
        21,
    );
    assert!(sim.stats.dropped > 0);
    let cfg = PipelineConfig::default();
    let (scene, _) = prepare_scene(&sim.dataset, &cfg.preprocess, &cfg.fusion, cfg.seed).unwrap();
    let tracks = run_sequence(&scene, &cfg.tracker_config()).unwrap();
    assert_eq!(tracks.len(), 2);
    let mut seen = Vec::new();
    for t in &tracks {
        let ids = gt_ids(t, &sim);
        assert!(ids.windows(2).all(|w| w[0] == w[1]), "identity switch in track {}", t.id);
        seen.push(ids[0]);
    }
    seen.sort_unstable();
    assert_eq!(seen, vec![0, 1]);
}

#[test]
fn perfect_inputs_reproduce_trajectory() {
    let sim = scenario(
        vec![ObjectSpec::moving(ObjectClass::Vehicle, CAR, [12.0, 1.0], [6.0, -1.0])],
        30,
        NoiseSpec::noiseless(),
        22,
    );
    let cfg = PipelineConfig::default();
    let (scene, _) = prepare_scene(&sim.dataset, &cfg.preprocess, &cfg.fusion, cfg.seed).unwrap();
    let tracks = run_sequence(&scene, &cfg.tracker_config()).unwrap();
    assert_eq!(tracks.len(), 1);
    let t = &tracks[0];
    assert_eq!(t.assigned_detection_count, t.len());
    for s in &t.states {
        let truth = &sim.ground_truth.frames[s.frame].objects[0].bbox;
        assert!((s.bbox.center - truth.center).norm() < 1e-6, "frame {}", s.frame);
    }
}

#[test]
fn flow_prediction_tracks_constant_velocity() {
    let sim = scenario(
        vec![ObjectSpec::moving(ObjectClass::Vehicle, CAR, [12.0, 0.0], [8.0, 2.0])],
        11,
        NoiseSpec::noiseless(),
        23,
    );
    let cfg = PipelineConfig::default();
    let (scene, _) = prepare_scene(&sim.dataset, &cfg.preprocess, &cfg.fusion, cfg.seed).unwrap();
    let tracker = cfg.tracker_config();
    let first = scene.frames[0].detections.detections[0].clone();
    let mut track = flowlabel::tracker::init_track(0, &first);
    for n in 1..=10 {
        let p = predict(&track, &scene.frames[n - 1], &tracker).unwrap();
        let truth = &sim.ground_truth.frames[n].objects[0].bbox;
        assert!((p.bbox.center - truth.center).norm() < 1e-6, "frame {n}");
        track.states.push(flowlabel::tracker::TrackState {
            frame: n,
            bbox: p.bbox,
            source: StateSource::FlowPredicted,
            mean_flow: None,
            point_count: 0,
            detection: None,
        });
        track.last_flow = p.flow;
    }
}

#[test]
fn refinement_never_lowers_precision() {
    for seed in [31, 32, 33] {
        let spec = ScenarioSpec {
            duration: 100,
            ..ScenarioSpec::mixed_traffic()
        };
        let sim = simulate(&spec, seed).unwrap();
        let run = label_sequence(&sim.dataset, &PipelineConfig::default()).unwrap();
        let fused = overall_pr(&fused_detection_labels(&run.scene), &sim.ground_truth, 0.5, IouKind::Bev);
        let refined = overall_pr(&run.labels, &sim.ground_truth, 0.5, IouKind::Bev);
        assert!(
            refined.precision() >= fused.precision(),
            "seed {seed}: {} < {}",
            refined.precision(),
            fused.precision()
        );
    }
}

#[test]
fn track_invariants_hold_on_noisy_scene() {
    let sim = simulate(&ScenarioSpec::mixed_traffic(), 34).unwrap();
    let run = label_sequence(&sim.dataset, &PipelineConfig::default()).unwrap();
    let fused: usize = run.scene.frames.iter().map(|f| f.detections.len()).sum();
    let assigned: usize = run.raw_tracks.iter().map(|t| t.assigned_detection_count).sum();
    // Every fused detection is assigned to exactly one track or spawns one.
    assert_eq!(assigned, fused);
    for t in run.raw_tracks.iter().chain(&run.tracks) {
        assert!(t.states.windows(2).all(|w| w[1].frame == w[0].frame + 1));
        let hits = t.states.iter().filter(|s| s.source == StateSource::DetectionAssigned).count();
        assert_eq!(hits, t.assigned_detection_count);
        assert!((0.0..=1.0).contains(&t.confidence));
    }
}
