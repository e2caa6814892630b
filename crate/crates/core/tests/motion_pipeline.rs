use partstyle::motion::{
    clip_dataset, extract_features, parse_bvh, read_archive, synth, write_archive, write_bvh,
    ClipRecord, JointMap, MotionClip, NormStats, Skeleton,
};

fn walk(preset: usize, frames: usize, seed: u64) -> (Skeleton, MotionClip) {
    let sk = Skeleton::standard();
    let raw = synth::walk(&sk, &synth::StyleParams::presets()[preset], frames, seed);
    let clip = extract_features(&raw, &sk).unwrap();
    (sk, clip)
}

#[test]
fn bvh_export_reimports_to_the_same_features() {
    let sk = Skeleton::standard();
    let raw = synth::walk(&sk, &synth::StyleParams::presets()[1], 48, 3);
    let clip = extract_features(&raw, &sk).unwrap();
    let text = write_bvh(&sk, &raw, 100.0);
    let (sk2, raw2) = parse_bvh(&text, &JointMap::default(), 100.0).unwrap();
    assert_eq!(raw2.frames(), 48);
    let back = extract_features(&raw2, &sk2).unwrap();
    // six decimals in the file bound the drift
    assert!(
        back.max_abs_diff(&clip) < 1e-3,
        "{}",
        back.max_abs_diff(&clip)
    );
}

#[test]
fn normalization_is_invertible() {
    let clips: Vec<MotionClip> = (0..3).map(|i| walk(i, 40, i as u64).1).collect();
    let norm = NormStats::compute(&clips).unwrap();
    for c in &clips {
        let back = norm.denormalize(&norm.normalize(c));
        assert!(back.max_abs_diff(c) < 1e-12);
    }
    let pooled: Vec<f64> = clips
        .iter()
        .flat_map(|c| norm.normalize(c).data().to_vec())
        .collect();
    let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
    assert!(mean.abs() < 1e-9);
    assert_eq!(
        NormStats::from_csv(&norm.to_csv()).unwrap().mean.len(),
        norm.mean.len()
    );
}

#[test]
fn windowed_archive_round_trip() {
    let (_, clip) = walk(0, 240, 9);
    let windows = clip_dataset(&clip, 120, 60);
    assert_eq!(windows.len(), 3);
    let entries: Vec<(ClipRecord, MotionClip)> = windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let rec = ClipRecord {
                id: format!("w{i}"),
                source: "walk".into(),
                start: 60 * i,
                mirrored: false,
            };
            (rec, w.clone())
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    write_archive(dir.path(), &entries).unwrap();
    let back = read_archive(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    for ((r0, c0), (r1, c1)) in entries.iter().zip(&back) {
        assert_eq!(r0, r1);
        // archives hold single-precision values
        let rounded: Vec<f64> = c0.data().iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(rounded, c1.data());
    }
}

#[test]
fn synthetic_styles_differ() {
    let (_, a) = walk(0, 60, 1);
    let (_, b) = walk(1, 60, 1);
    assert!(a.max_abs_diff(&b) > 1e-2);
    let (_, a2) = walk(0, 60, 1);
    assert_eq!(a.data(), a2.data());
}
