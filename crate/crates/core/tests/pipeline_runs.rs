use std::collections::BTreeMap;

use clusterfusion::decoder::confidence;
use clusterfusion::kpconv::{KPNetworkConfig, NetworkVariant};
use clusterfusion::metrics::{evaluate, EvalConfig};
use clusterfusion::pipeline::{run_frames, FeatureMode, PipelineConfig};
use clusterfusion::scene::{synth_scene, SynthConfig};
use proptest::prelude::*;

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

#[test]
fn output_is_independent_of_thread_count() {
    let frames = synth_scene(&SynthConfig { frames: 8, seed: 21, ..SynthConfig::noisy() }).unwrap();
    let cfg = PipelineConfig::new(FeatureMode::Hybrid, KPNetworkConfig::new(NetworkVariant::Lite, 2));
    let one = pool(1).install(|| run_frames(&frames, &cfg)).unwrap();
    let three = pool(3).install(|| run_frames(&frames, &cfg)).unwrap();
    assert_eq!(one, three);
}

#[test]
fn noisy_scenes_score_below_noiseless() {
    let eval = |cfg: SynthConfig| {
        let frames = synth_scene(&cfg).unwrap();
        let out = run_frames(&frames, &PipelineConfig::with_seed(FeatureMode::Handcrafted, 0)).unwrap();
        let dets: BTreeMap<_, _> = out.into_iter().map(|o| (o.detections.frame_id, o.detections.detections)).collect();
        let gts: BTreeMap<_, _> = frames.into_iter().map(|f| (f.frame_id, f.ground_truth.unwrap())).collect();
        evaluate(&dets, &gts, &EvalConfig::default()).unwrap()
    };
    let clean = eval(SynthConfig { frames: 10, seed: 3, ..Default::default() });
    let noisy = eval(SynthConfig { frames: 10, seed: 3, ..SynthConfig::noisy() });
    assert_eq!(clean.map, 1.0);
    assert!(noisy.nds < clean.nds);
    assert!(noisy.mean_tp.ate > 1e-3);
}

#[test]
fn clusters_carry_radar_support() {
    let frames = synth_scene(&SynthConfig { frames: 5, clutter_density: 0.0, ..Default::default() }).unwrap();
    let cfg = PipelineConfig::new(FeatureMode::Learned, KPNetworkConfig::new(NetworkVariant::Lite, 4));
    for (f, o) in frames.iter().zip(run_frames(&frames, &cfg).unwrap()) {
        let planted: usize = f.radar_sweeps.iter().map(|s| s.points.len()).sum();
        let clustered: usize = o.detections.clusters.iter().map(|c| c.size).sum();
        // Moving objects drift out of their frustum in older sweeps.
        assert!(clustered <= planted);
        assert!(clustered > 0);
        assert_eq!(o.bev.clusters.len(), f.preliminary_detections.len());
        assert_eq!(o.bev.boxes.len(), o.detections.detections.len());
    }
}

proptest! {
    #[test]
    fn p3d_never_exceeds_pk(p_k in 0.0..=1.0f64, log_sigma in -20.0..3.0f64) {
        let (p_dep, p_3d) = confidence(p_k, log_sigma);
        prop_assert!((0.0..=1.0).contains(&p_dep));
        prop_assert!(p_3d <= p_k);
    }
}
