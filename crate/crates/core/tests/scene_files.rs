use proptest::prelude::*;

use clusterfusion::decoder::{encode_detections, HeadOutputs};
use clusterfusion::scene::{
    load_scene, read_scene, save_scene, synth_scene, write_scene, SceneError, SynthConfig,
};

fn config() -> impl Strategy<Value = SynthConfig> {
    (
        any::<u64>(),
        1usize..4,
        (0usize..3, 0usize..5),
        0.0..0.02f64,
        (0usize..3, 0usize..6),
        (0.0..0.5f64, 0.0..1.0f64),
        (0.0..3.0f64, 0.0..5.0f64),
        -6.0..2.0f64,
        1usize..7,
    )
        .prop_map(|(seed, frames, (lo, extra), clutter, (plo, pextra), (pn, vn), (dn, jit), ls, sweeps)| {
            SynthConfig {
                seed,
                frames,
                min_objects: lo,
                max_objects: lo + extra,
                clutter_density: clutter,
                min_points_per_object: plo,
                max_points_per_object: plo + pextra,
                position_noise: pn,
                velocity_noise: vn,
                depth_noise: dn,
                bbox_jitter: jit,
                log_sigma: ls,
                sweeps,
                ..SynthConfig::default()
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_scenes_round_trip(cfg in config()) {
        let mut frames = synth_scene(&cfg).unwrap();
        // Exercise the optional head-output field too.
        if let Some(f) = frames.first_mut() {
            let maps = encode_detections(&f.preliminary_detections, f.camera.image_size(), 4, 10).unwrap();
            f.head_outputs = Some(HeadOutputs::from_dense(&maps));
        }
        let mut buf = Vec::new();
        write_scene(&mut buf, &frames).unwrap();
        let back = read_scene(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &frames);
        let mut again = Vec::new();
        write_scene(&mut again, &back).unwrap();
        prop_assert_eq!(again, buf);
    }
}

#[test]
fn scene_file_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.jsonl");
    let frames = synth_scene(&SynthConfig { frames: 3, ..SynthConfig::noisy() }).unwrap();
    save_scene(&path, &frames).unwrap();
    assert_eq!(load_scene(&path).unwrap(), frames);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(matches!(load_scene(&dir.path().join("absent")), Err(SceneError::Io(_))));
}

#[test]
fn blank_lines_are_skipped() {
    let frames = synth_scene(&SynthConfig { frames: 2, ..Default::default() }).unwrap();
    let mut buf = Vec::new();
    write_scene(&mut buf, &frames).unwrap();
    let text = String::from_utf8(buf).unwrap().replace('\n', "\n\n");
    assert_eq!(read_scene(format!("\n{text}").as_bytes()).unwrap(), frames);
}

#[test]
fn unknown_class_is_rejected() {
    let mut frames = synth_scene(&SynthConfig { frames: 1, min_objects: 1, ..Default::default() }).unwrap();
    frames[0].preliminary_detections[0].class_id = 10;
    let mut buf = Vec::new();
    write_scene(&mut buf, &frames).unwrap();
    match read_scene(buf.as_slice()) {
        Err(SceneError::Invalid { line, message }) => {
            assert_eq!(line, 2);
            assert!(message.contains("class id 10"));
        }
        other => panic!("unexpected {other:?}"),
    }
}
