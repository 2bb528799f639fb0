mod common;

use std::fs;
use std::path::Path;

use proptest::prelude::*;

use chromaset::annotations::{write_label, BoundingBox, Detection, Extents};
use chromaset::detmetrics::{
    self, average_precision_exact, evaluate_dirs, evaluate_frames, iou, log_average_miss_rate,
    match_detections, ApMode, Frame, MatchResult, MetricsError,
};
use common::oracles;

fn ext(a: u32, b: u32, c: u32, d: u32) -> Extents {
    Extents::new(a, b, c, d).unwrap()
}

fn bx(e: Extents) -> BoundingBox {
    BoundingBox::new("aeroplane", e).unwrap()
}

fn det(e: Extents, c: f64) -> Detection {
    Detection::new(bx(e), c).unwrap()
}

fn arb_extents() -> impl Strategy<Value = Extents> {
    (0u32..30, 0u32..30, 0u32..15, 0u32..15).prop_map(|(x, y, w, h)| ext(x, y, x + w, y + h))
}

fn arb_instance() -> impl Strategy<Value = (Vec<Detection>, Vec<BoundingBox>)> {
    (
        proptest::collection::vec((arb_extents(), 0u32..20), 0..=10),
        proptest::collection::vec(arb_extents(), 1..=5),
    )
        .prop_map(|(preds, gts)| {
            (
                preds
                    .into_iter()
                    .map(|(e, c)| det(e, f64::from(c) / 20.0))
                    .collect(),
                gts.into_iter().map(bx).collect(),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn iou_symmetric_bounded_and_matches_pixel_count(a in arb_extents(), b in arb_extents()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v == 1.0, a == b);
        prop_assert!((v - oracles::iou_by_pixels(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn ap_equals_pr_table_walk((preds, gts) in arb_instance()) {
        let m = match_detections(&preds, &gts, 0.5);
        let flags: Vec<bool> = m.ranked.iter().map(|r| r.1).collect();
        let exact = average_precision_exact(&m, ApMode::TpRanks).unwrap();
        prop_assert_eq!(exact, oracles::ap_from_pr_table(&flags, gts.len()));
        prop_assert!(detmetrics::average_precision(&m).unwrap() <= 1.0);
    }

    #[test]
    fn match_counts_are_consistent((preds, gts) in arb_instance()) {
        let m = match_detections(&preds, &gts, 0.5);
        prop_assert_eq!(m.tp() + m.fn_count(), gts.len());
        prop_assert_eq!(m.tp() + m.fp(), preds.len());
        prop_assert!(m.tp() <= preds.len());
    }

    #[test]
    fn monotone_rescoring_changes_nothing(
        frames in proptest::collection::vec(arb_instance(), 1..6)
    ) {
        let frames: Vec<Frame> = frames
            .into_iter()
            .map(|(preds, gts)| Frame { gts, preds })
            .collect();
        let squashed: Vec<Frame> = frames
            .iter()
            .map(|f| Frame {
                gts: f.gts.clone(),
                preds: f
                    .preds
                    .iter()
                    .map(|d| Detection { bbox: d.bbox.clone(), confidence: d.confidence.powi(3) * 0.5 })
                    .collect(),
            })
            .collect();
        let a = evaluate_frames(&frames, 0.5, ApMode::TpRanks);
        let b = evaluate_frames(&squashed, 0.5, ApMode::TpRanks);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn frame_order_does_not_matter(
        frames in proptest::collection::vec(arb_instance(), 1..6)
    ) {
        let mut frames: Vec<Frame> = frames
            .into_iter()
            .map(|(preds, gts)| Frame { gts, preds })
            .collect();
        let a = evaluate_frames(&frames, 0.5, ApMode::TpRanks);
        frames.reverse();
        let b = evaluate_frames(&frames, 0.5, ApMode::TpRanks);
        prop_assert_eq!(a.per_class.keys().collect::<Vec<_>>(), b.per_class.keys().collect::<Vec<_>>());
        for (k, ca) in &a.per_class {
            let cb = &b.per_class[k];
            prop_assert_eq!((ca.tp, ca.fp, ca.fn_count), (cb.tp, cb.fp, cb.fn_count));
            prop_assert!((ca.ap - cb.ap).abs() < 1e-12);
            prop_assert!((ca.lamr - cb.lamr).abs() < 1e-12);
        }
    }

    #[test]
    fn lamr_equals_threshold_sweep(
        frames in proptest::collection::vec(arb_instance(), 1..6)
    ) {
        let matches: Vec<MatchResult> = frames
            .iter()
            .map(|(p, g)| match_detections(p, g, 0.5))
            .collect();
        let num_gt: usize = matches.iter().map(|m| m.num_gt).sum();
        let all: Vec<(f64, bool)> = matches.iter().flat_map(|m| m.ranked.clone()).collect();
        let got = log_average_miss_rate(&matches, frames.len());
        let want = oracles::lamr_by_sweep(&all, num_gt, frames.len());
        prop_assert!((got - want).abs() < 1e-12, "{} vs {}", got, want);
    }
}

#[test]
fn literal_all_rank_sum_can_exceed_one() {
    let m = MatchResult::from_flags(&[true, false, true], 2);
    assert!(detmetrics::average_precision_with(&m, ApMode::AllRanks).unwrap() > 1.0);
    assert!((detmetrics::average_precision(&m).unwrap() - 5.0 / 6.0).abs() < 1e-15);
}

#[test]
fn two_image_lamr_matches_hand_sweep() {
    // image 0: one gt, found at 0.8; image 1: no gt, a spurious box at 0.9
    let g = ext(10, 10, 29, 29);
    let m0 = match_detections(&[det(g, 0.8)], &[bx(g)], 0.5);
    let m1 = match_detections(&[det(ext(0, 0, 5, 5), 0.9)], &[], 0.5);
    let got = log_average_miss_rate(&[m0, m1], 2);
    // FPPI 0.5 is reached before the hit, so 7 of the 9 references see MR 1
    // and the last two see MR 0 (floored at 1e-10)
    let want = 10f64.powf(-20.0 / 9.0);
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    let all = vec![(0.8, true), (0.9, false)];
    assert!((got - oracles::lamr_by_sweep(&all, 1, 2)).abs() < 1e-12);
}

fn write_predictions(path: &Path, dets: &[(f64, Extents)]) {
    let body: String = dets
        .iter()
        .map(|(c, e)| format!("aeroplane {c} {} {} {} {}\n", e.x_min, e.y_min, e.x_max, e.y_max))
        .collect();
    fs::write(path, body).unwrap();
}

/// 700 single-object frames: `tp_first` frames whose top detection is a hit,
/// `fp_only` frames with only a misplaced box, the rest with no detections.
fn paper_style_fixture(root: &Path, tp_first: usize, fp_only: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    let gt_dir = root.join("gt");
    let pred_dir = root.join("pred");
    fs::create_dir_all(&gt_dir).unwrap();
    fs::create_dir_all(&pred_dir).unwrap();
    let g = ext(100, 80, 299, 229);
    let off = ext(400, 300, 480, 380);
    for i in 0..700 {
        let stem = format!("frame{i:04}");
        write_label(&[bx(g)], gt_dir.join(format!("{stem}.txt"))).unwrap();
        let p = pred_dir.join(format!("{stem}.txt"));
        if i < tp_first {
            // a lower-ranked duplicate rides along on every third frame
            let mut dets = vec![(0.9, ext(102, 80, 301, 231))];
            if i % 3 == 0 {
                dets.push((0.4, g));
            }
            write_predictions(&p, &dets);
        } else if i < tp_first + fp_only {
            write_predictions(&p, &[(0.7, off)]);
        } else {
            write_predictions(&p, &[]);
        }
    }
    (gt_dir, pred_dir)
}

#[test]
fn designed_fixture_reproduces_its_map_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, pred) = paper_style_fixture(dir.path(), 593, 54);
    let r = evaluate_dirs(&gt, &pred, 0.5, ApMode::TpRanks).unwrap();
    let c = &r.per_class["aeroplane"];
    assert_eq!(r.frames, 700);
    assert_eq!(c.tp, 593);
    assert_eq!(c.fn_count, 107);
    assert_eq!(c.fp, 54 + 593usize.div_ceil(3));
    assert!((c.miss_rate - 107.0 / 700.0).abs() < 1e-12);
    assert!((r.map - 593.0 / 700.0).abs() < 1e-12);
}

#[test]
fn hundred_frame_directory() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    let pred = dir.path().join("pred");
    fs::create_dir_all(&gt).unwrap();
    fs::create_dir_all(&pred).unwrap();
    for i in 0..100 {
        let e = ext(i, i, i + 40, i + 30);
        write_label(&[bx(e)], gt.join(format!("f{i:03}.txt"))).unwrap();
        write_predictions(&pred.join(format!("f{i:03}.txt")), &[(0.5 + f64::from(i) / 400.0, e)]);
    }
    let r = evaluate_dirs(&gt, &pred, 0.5, ApMode::TpRanks).unwrap();
    assert_eq!(r.frames, 100);
    assert_eq!(r.map, 1.0);
    assert!(r.lamr <= detmetrics::LAMR_FLOOR * (1.0 + 1e-9));

    let report = dir.path().join("report.json");
    detmetrics::write_report(&r, &report).unwrap();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["mAP"], 1.0);
    assert_eq!(v["frames"], 100);
    assert_eq!(v["per_class"]["aeroplane"]["tp"], 100);
    assert_eq!(v["per_class"]["aeroplane"]["fn"], 0);
}

#[test]
fn missing_prediction_file_counts_as_misses() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    let pred = dir.path().join("pred");
    fs::create_dir_all(&gt).unwrap();
    fs::create_dir_all(&pred).unwrap();
    let e = ext(0, 0, 9, 9);
    write_label(&[bx(e)], gt.join("a.txt")).unwrap();
    write_label(&[bx(e), bx(ext(20, 20, 29, 29))], gt.join("b.txt")).unwrap();
    write_predictions(&pred.join("a.txt"), &[(0.9, e)]);
    let r = evaluate_dirs(&gt, &pred, 0.5, ApMode::TpRanks).unwrap();
    let c = &r.per_class["aeroplane"];
    assert_eq!((c.tp, c.fp, c.fn_count), (1, 0, 2));
    assert_eq!(r.missing_predictions, vec!["b".to_string()]);
    assert!((r.map - 0.5).abs() < 1e-12);
}

#[test]
fn empty_predictions_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    let pred = dir.path().join("pred");
    fs::create_dir_all(&gt).unwrap();
    fs::create_dir_all(&pred).unwrap();
    for i in 0..5 {
        write_label(&[bx(ext(i, i, i + 5, i + 5))], gt.join(format!("{i}.txt"))).unwrap();
        write_predictions(&pred.join(format!("{i}.txt")), &[]);
    }
    let r = evaluate_dirs(&gt, &pred, 0.5, ApMode::TpRanks).unwrap();
    assert_eq!(r.map, 0.0);
    assert_eq!(r.per_class["aeroplane"].miss_rate, 1.0);
    assert_eq!(r.lamr, 1.0);
}

#[test]
fn unpaired_and_empty_dirs_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    let pred = dir.path().join("pred");
    fs::create_dir_all(&gt).unwrap();
    fs::create_dir_all(&pred).unwrap();
    assert!(matches!(
        evaluate_dirs(&gt, &pred, 0.5, ApMode::TpRanks),
        Err(MetricsError::NoFrames(_))
    ));
    write_label(&[bx(ext(0, 0, 1, 1))], gt.join("a.txt")).unwrap();
    write_predictions(&pred.join("zz_orphan.txt"), &[]);
    match evaluate_dirs(&gt, &pred, 0.5, ApMode::TpRanks) {
        Err(MetricsError::UnpairedStems(s)) => assert_eq!(s, vec!["zz_orphan".to_string()]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn multi_class_frames_split_by_class() {
    let bird = BoundingBox::new("bird", ext(41, 224, 224, 341)).unwrap();
    let plane = BoundingBox::new("aeroplane", ext(295, 80, 583, 294)).unwrap();
    let frames = vec![Frame {
        gts: vec![bird.clone(), plane.clone()],
        preds: vec![
            Detection::new(bird, 0.8).unwrap(),
            // right place, wrong class: a plane FP and the plane gt is missed
            Detection::new(BoundingBox::new("bird", plane.extents).unwrap(), 0.9).unwrap(),
        ],
    }];
    let r = evaluate_frames(&frames, 0.5, ApMode::TpRanks);
    let b = &r.per_class["bird"];
    let a = &r.per_class["aeroplane"];
    assert_eq!((b.tp, b.fp, b.fn_count), (1, 1, 0));
    assert_eq!((a.tp, a.fp, a.fn_count), (0, 0, 1));
    assert!((b.ap - 0.5).abs() < 1e-12);
    assert!((r.map - 0.25).abs() < 1e-12);
}
