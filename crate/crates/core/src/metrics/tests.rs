use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::data::{synthesize_annotated, SyntheticSceneConfig};
use crate::rng::{seeded, uniform};
use rand::seq::SliceRandom;
use rand::Rng;

fn set(conf: &[f64]) -> PointPredictionSet {
    PointPredictionSet { points: conf.iter().map(|&c| PointPrediction { x: 0.5, y: 0.5, confidence: c }).collect() }
}

#[test]
fn threshold_is_strict() {
    let kept = filter_by_threshold(&set(&[0.9, 0.3, 0.29]), 0.3);
    assert_eq!(kept.confidences(), vec![0.9]);
    assert_eq!(filter_by_threshold(&set(&[1e-9, 0.5]), 0.0).len(), 2);
    assert!(filter_by_threshold(&set(&[0.999999, 0.5]), 1.0).is_empty());
    let once = filter_by_threshold(&set(&[0.4, 0.1, 0.8, 0.3]), 0.3);
    assert_eq!(filter_by_threshold(&once, 0.3), once);
}

#[test]
fn metric_fixtures() {
    let r = compute_metrics(&[10, 20], &[12, 16]).unwrap();
    assert!((r.mae - 3.0).abs() < 1e-12);
    assert!((r.mse - libm::sqrt(10.0)).abs() < 1e-12);
    assert!((r.nae - (2.0 / 12.0 + 4.0 / 16.0) / 2.0).abs() < 1e-12);
    assert!((r.nae - 0.2083).abs() < 1e-4);
    let same = compute_metrics(&[3, 0, 7], &[3, 0, 7]).unwrap();
    assert_eq!((same.mae, same.mse, same.nae), (0.0, 0.0, 0.0));
    assert!(compute_metrics(&[], &[]).is_err());
    assert!(compute_metrics(&[1], &[1, 2]).is_err());
}

#[test]
fn report_renders_three_decimals() {
    let r = MetricsReport { mae: 13.714, mse: 17.909, nae: 0.394, n_frames: 1, n_frames_nae: 1 };
    assert_eq!(r.render(), "MAE 13.714 MSE 17.909 NAE 0.394");
}

#[test]
fn zero_ground_truth_frames_skip_nae() {
    let r = compute_metrics(&[2, 5], &[0, 4]).unwrap();
    assert_eq!(r.n_frames_nae, 1);
    assert!((r.nae - 0.25).abs() < 1e-12);
    assert!((r.mae - 1.5).abs() < 1e-12);
    let none = compute_metrics(&[1], &[0]).unwrap();
    assert_eq!((none.nae, none.n_frames_nae), (0.0, 0));
}

#[test]
fn metric_invariances() {
    let mut rng = seeded(1);
    for _ in 0..50 {
        let n = rng.gen_range(1..20);
        let p: Vec<usize> = (0..n).map(|_| rng.gen_range(0..30)).collect();
        let g: Vec<usize> = (0..n).map(|_| rng.gen_range(0..30)).collect();
        let base = compute_metrics(&p, &g).unwrap();

        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let pp: Vec<usize> = idx.iter().map(|&i| p[i]).collect();
        let gg: Vec<usize> = idx.iter().map(|&i| g[i]).collect();
        let shuffled = compute_metrics(&pp, &gg).unwrap();
        assert!((base.mae - shuffled.mae).abs() < 1e-12 && (base.nae - shuffled.nae).abs() < 1e-12);
        assert!((base.mse - shuffled.mse).abs() < 1e-12);

        let k = rng.gen_range(2..5);
        let scaled = compute_metrics(
            &p.iter().map(|v| v * k).collect::<Vec<_>>(),
            &g.iter().map(|v| v * k).collect::<Vec<_>>(),
        )
        .unwrap();
        assert!((scaled.nae - base.nae).abs() < 1e-12);
        assert!((scaled.mae - k as f64 * base.mae).abs() < 1e-9);
    }
}

fn at(x: f64, y: f64) -> PointPredictionSet {
    PointPredictionSet { points: vec![PointPrediction { x, y, confidence: 0.9 }] }
}

#[test]
fn stitching_examples() {
    let grid = crop_patches(64, 64, 32).unwrap();
    let out = stitch_patch_predictions(&[PatchPredictions { x0: 32, y0: 0, preds: at(0.25, 0.25) }], &grid).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!((out[0].x, out[0].y), (40.0, 8.0));

    // Width 50: origins 0 and 18; x = 20 belongs to the patch at 18.
    let grid = crop_patches(32, 50, 32).unwrap();
    let from_first = PatchPredictions { x0: 0, y0: 0, preds: at(20.0 / 32.0, 0.5) };
    let from_second = PatchPredictions { x0: 18, y0: 0, preds: at(2.0 / 32.0, 0.5) };
    assert!(stitch_patch_predictions(&[from_first.clone()], &grid).unwrap().is_empty());
    let both = stitch_patch_predictions(&[from_first, from_second], &grid).unwrap();
    assert_eq!(both.len(), 1);
    assert!((both[0].x - 20.0).abs() < 1e-12);

    let single = crop_patches(32, 32, 32).unwrap();
    let many = PatchPredictions { x0: 0, y0: 0, preds: set(&[0.4, 0.5, 0.6]) };
    assert_eq!(stitch_patch_predictions(&[many], &single).unwrap().len(), 3);

    let unknown = PatchPredictions { x0: 5, y0: 0, preds: at(0.1, 0.1) };
    assert!(stitch_patch_predictions(&[unknown], &grid).is_err());
}

#[test]
fn stitching_counts_each_physical_point_once() {
    // Each physical point is seen by every patch covering it; exactly one
    // copy must survive.
    let mut rng = seeded(7);
    for (h, w, p) in [(50, 50, 32), (40, 70, 16), (33, 33, 32), (64, 48, 20)] {
        let grid = crop_patches(h, w, p).unwrap();
        let points: Vec<(f64, f64)> =
            (0..200).map(|_| (uniform(&mut rng, 0.0, w as f64), uniform(&mut rng, 0.0, h as f64))).collect();
        let per_patch: Vec<PatchPredictions> = grid
            .patches
            .iter()
            .map(|patch| {
                let inside = points.iter().filter(|(x, y)| {
                    *x >= patch.x0 as f64 && *x < (patch.x0 + p) as f64 && *y >= patch.y0 as f64 && *y < (patch.y0 + p) as f64
                });
                let pts = inside
                    .map(|(x, y)| PointPrediction {
                        x: (x - patch.x0 as f64) / p as f64,
                        y: (y - patch.y0 as f64) / p as f64,
                        confidence: 0.9,
                    })
                    .collect();
                PatchPredictions { x0: patch.x0, y0: patch.y0, preds: PointPredictionSet { points: pts } }
            })
            .collect();
        let out = stitch_patch_predictions(&per_patch, &grid).unwrap();
        assert_eq!(out.len(), points.len(), "{h}x{w} patch {p}");
    }
}

fn fixture() -> (ModelConfig, ModelParams, Vec<AnnotatedSequence>) {
    let config = ModelConfig { crop_size: 16, frames: 3, ..ModelConfig::miniature() };
    let params = ModelParams::init(&config, 5).unwrap();
    let scene = SyntheticSceneConfig { height: 20, width: 24, num_frames: 2, count_range: (1, 4), seed: 9, ..Default::default() };
    (config, params, vec![synthesize_annotated(&scene, "fx").unwrap()])
}

#[test]
fn evaluate_split_matches_manual_pipeline() {
    let (config, params, data) = fixture();
    let inf = InferenceConfig { threshold: 0.45, patch_size: 16 };
    let (report, rows) = evaluate_split(&params, &config, &data, &inf).unwrap();
    assert_eq!(rows.len(), 2);

    let grid = crop_patches(20, 24, 16).unwrap();
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for pos in 0..2 {
        let mut per_patch = Vec::new();
        for patch in &grid.patches {
            let clip = clip_inputs(&data[0], pos, patch.x0, patch.y0, &config).unwrap();
            let (p, _) = predict(&params, &config, &clip).unwrap();
            per_patch.push(PatchPredictions { x0: patch.x0, y0: patch.y0, preds: filter_by_threshold(&p, 0.45) });
        }
        preds.push(stitch_patch_predictions(&per_patch, &grid).unwrap().len());
        gts.push(data[0].annotations.frames[pos].count());
    }
    assert_eq!(rows.iter().map(|r| r.pred_count).collect::<Vec<_>>(), preds);
    assert_eq!(rows.iter().map(|r| r.gt_count).collect::<Vec<_>>(), gts);
    assert_eq!(report, compute_metrics(&preds, &gts).unwrap());
}

#[test]
fn evaluate_split_edge_cases() {
    let (config, params, data) = fixture();
    let none = InferenceConfig { threshold: 1.0, patch_size: 16 };
    let (report, rows) = evaluate_split(&params, &config, &data, &none).unwrap();
    assert!(rows.iter().all(|r| r.pred_count == 0));
    let gt_mean = rows.iter().map(|r| r.gt_count as f64).sum::<f64>() / rows.len() as f64;
    assert!((report.mae - gt_mean).abs() < 1e-12);

    let inf = InferenceConfig { threshold: 0.45, patch_size: 16 };
    let (a, _) = evaluate_split(&params, &config, &data, &inf).unwrap();
    let doubled = vec![data[0].clone(), data[0].clone()];
    let (b, rows) = evaluate_split(&params, &config, &doubled, &inf).unwrap();
    assert_eq!(rows.len(), 4);
    assert!((a.mae - b.mae).abs() < 1e-12 && (a.mse - b.mse).abs() < 1e-12 && (a.nae - b.nae).abs() < 1e-12);

    let bad = InferenceConfig { threshold: 0.3, patch_size: 8 };
    assert!(evaluate_split(&params, &config, &data, &bad).is_err());
    let big = ModelConfig { crop_size: 32, downsample_factor: 8, backbone_channels: vec![4, 4, 4], ..config };
    let p = ModelParams::init(&big, 0).unwrap();
    assert!(evaluate_split(&p, &big, &data, &InferenceConfig::for_model(&big)).is_err());
}

#[test]
fn csv_has_header_and_rows() {
    let rows = vec![
        FrameResult { sequence_id: "a".into(), frame_index: 0, gt_count: 3, pred_count: 5 },
        FrameResult { sequence_id: "a".into(), frame_index: 1, gt_count: 4, pred_count: 1 },
    ];
    assert_eq!(render_csv(&rows), "sequence_id,frame_index,gt_count,pred_count,abs_err\na,0,3,5,2\na,1,4,1,3\n");
}
