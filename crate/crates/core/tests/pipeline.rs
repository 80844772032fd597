use std::path::Path;

use gst_vqa::eval::{run_trials, EvalOptions};
use gst_vqa::fusion::{fit, predict, GstFeatureVector, Hyperparams};
use gst_vqa::manifest::DatasetManifest;
use gst_vqa::spatial::spatial_index;
use gst_vqa::synth::{add_gaussian_noise, frame_rate_distortion, moving_texture_video};
use gst_vqa::tgreed::compute_tgreed;
use gst_vqa::video::{read_video, write_y4m, VideoMeta};
use gst_vqa::{FilterBankConfig, Fps, SpatialModel};

fn fps(n: u32) -> Fps {
    Fps::integer(n).unwrap()
}

fn features(r: &Path, d: &Path) -> Vec<f64> {
    let r = read_video(&VideoMeta::y4m(r)).unwrap();
    let d = read_video(&VideoMeta::y4m(d)).unwrap();
    let s = spatial_index(&r, &d, &SpatialModel::Ssim).unwrap();
    let t = compute_tgreed(&r, &d, &FilterBankConfig::default()).unwrap();
    GstFeatureVector::assemble(&s, &t).unwrap().0.to_vec()
}

#[test]
fn files_to_scores() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("pair_id,ref_path,dist_path,dist_fps,content_id,mos\n");
    for c in 0..8u64 {
        let r = moving_texture_video(c, 160, 160, 32, fps(120)).unwrap();
        write_y4m(&dir.path().join(format!("r{c}.y4m")), &r).unwrap();
        for (k, rate) in [120u32, 60, 30].into_iter().enumerate() {
            let d = if rate == 120 { r.clone() } else { frame_rate_distortion(&r, fps(rate), false).unwrap() };
            let d = add_gaussian_noise(&d, 3.0 * (k + 1) as f64, c * 10 + k as u64).unwrap();
            write_y4m(&dir.path().join(format!("d{c}_{k}.y4m")), &d).unwrap();
            csv += &format!("p{c}_{k},r{c}.y4m,d{c}_{k}.y4m,{rate},c{c},{}\n", 90 - 25 * k as i32 + c as i32);
        }
    }
    let mpath = dir.path().join("m.csv");
    std::fs::write(&mpath, csv).unwrap();
    let manifest = DatasetManifest::read(&mpath).unwrap();
    assert_eq!(manifest.len(), 24);

    let feats: Vec<Vec<f64>> = manifest
        .rows
        .iter()
        .map(|row| {
            let d = read_video(&VideoMeta {
                declared_fps: Some(row.dist_fps),
                ..VideoMeta::y4m(&row.dist_path)
            })
            .unwrap();
            assert_eq!(d.fps(), row.dist_fps);
            features(&row.ref_path, &row.dist_path)
        })
        .collect();
    for f in &feats {
        assert_eq!(f.len(), 15);
        assert!(f[0] > 0.0 && f[0] < 1.0);
        assert!(f[1..].iter().all(|v| *v > 0.0));
    }

    let model = fit(&feats, &manifest.mos(), &Hyperparams::default()).unwrap();
    let p0 = predict(&model, &feats[0]).unwrap();
    let p2 = predict(&model, &feats[2]).unwrap();
    assert!(p0 > p2, "mild distortion should score above severe: {p0} vs {p2}");

    let opts = EvalOptions {
        n_trials: 3,
        seed: 1,
        ..EvalOptions::default()
    };
    let report = run_trials(&manifest, &feats, &opts).unwrap();
    assert_eq!(report.trials.len(), 3);
    assert_eq!(report.per_fps_median.len(), 3);
}

#[test]
fn declared_rate_must_match_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.y4m");
    write_y4m(&path, &moving_texture_video(1, 32, 32, 4, fps(60)).unwrap()).unwrap();
    let meta = VideoMeta {
        declared_fps: Some(fps(30)),
        ..VideoMeta::y4m(&path)
    };
    assert!(matches!(read_video(&meta), Err(gst_vqa::Error::Format(_))));
}
