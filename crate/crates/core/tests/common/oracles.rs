//! Reference computations that share no code path with the library.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

use chromaset::Extents;

/// AP from an explicit precision/recall table:
/// `sum_i precision(i) * (recall(i) - recall(i-1))`.
pub fn ap_from_pr_table(flags: &[bool], num_gt: usize) -> BigRational {
    let g = BigInt::from(num_gt);
    let mut table = Vec::new();
    let (mut tp, mut fp) = (0i64, 0i64);
    for &hit in flags {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        let precision = BigRational::new(BigInt::from(tp), BigInt::from(tp + fp));
        let recall = BigRational::new(BigInt::from(tp), g.clone());
        table.push((precision, recall));
    }
    let mut ap = BigRational::zero();
    let mut prev_recall = BigRational::zero();
    for (p, r) in table {
        ap += p * (r.clone() - prev_recall);
        prev_recall = r;
    }
    ap
}

/// IoU by counting covered pixels on the grid.
pub fn iou_by_pixels(a: &Extents, b: &Extents) -> f64 {
    let x_end = a.x_max.max(b.x_max);
    let y_end = a.y_max.max(b.y_max);
    let inside = |e: &Extents, x: u32, y: u32| x >= e.x_min && x <= e.x_max && y >= e.y_min && y <= e.y_max;
    let (mut inter, mut union) = (0u64, 0u64);
    for y in 0..=y_end {
        for x in 0..=x_end {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            if ia && ib {
                inter += 1;
            }
            if ia || ib {
                union += 1;
            }
        }
    }
    inter as f64 / union as f64
}

/// Log-average miss rate by trying every threshold.
///
/// `dets` holds `(confidence, is_tp)` across the dataset. For each reference
/// FPPI, the lowest miss rate among all thresholds whose FPPI does not exceed
/// it (accepting nothing counts as a threshold) is taken.
pub fn lamr_by_sweep(dets: &[(f64, bool)], num_gt: usize, num_images: usize) -> f64 {
    let mut thresholds: Vec<f64> = dets.iter().map(|d| d.0).collect();
    thresholds.push(f64::INFINITY);
    let points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let tp = dets.iter().filter(|d| d.0 >= t && d.1).count();
            let fp = dets.iter().filter(|d| d.0 >= t && !d.1).count();
            (fp as f64 / num_images as f64, 1.0 - tp as f64 / num_gt as f64)
        })
        .collect();
    let mut logs = 0.0;
    for k in 0..9 {
        let r = 10f64.powf(-2.0 + 0.25 * f64::from(k));
        let best = points
            .iter()
            .filter(|p| p.0 <= r)
            .map(|p| p.1)
            .fold(f64::INFINITY, f64::min);
        logs += best.max(1e-10).ln();
    }
    (logs / 9.0).exp()
}
