use semfield::costvolume::{build_cost_volume, depth_candidates, patch_features, regress_depth};
use semfield::scene::textured_plane;
use semfield::{Exec, Tensor};

fn argmax(row: &[f32]) -> usize {
    (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap()
}

#[test]
fn plane_correlation_peaks_at_true_candidate() {
    let cands = depth_candidates(1.0, 3.0, 64).unwrap();
    for (idx, seed) in [(10, 1), (30, 2), (50, 3)] {
        let depth = cands[idx];
        let baseline = (32.0 / depth).round() * depth / 64.0;
        let p = textured_plane(64, 64.0, baseline, depth, 1.0, 3.0, seed).unwrap();
        let feats: Vec<Tensor<f32>> = p.images.iter().map(|i| patch_features(i, 64, 64).unwrap()).collect();
        let refs: Vec<&Tensor<f32>> = feats.iter().collect();
        let cvs = build_cost_volume(&refs, &p.cameras, &cands, 1, Exec::default()).unwrap();
        for cv in &cvs {
            let valid: Vec<usize> = (0..cv.valid.len()).filter(|&i| cv.valid[i]).collect();
            assert!(!valid.is_empty());
            let hits = valid.iter().filter(|&&i| argmax(&cv.corr.data()[i * 64..(i + 1) * 64]) == idx).count();
            let frac = hits as f64 / valid.len() as f64;
            assert!(frac >= 0.95, "depth {idx} view {}: {frac}", cv.view);
        }
    }
}

#[test]
fn sub_pixel_plane_keeps_mean_peak() {
    // with a fractional true disparity the mean correlation still peaks at the plane
    let cands = depth_candidates(1.0, 3.0, 64).unwrap();
    let depth = cands[30];
    let p = textured_plane(64, 64.0, 0.5, depth, 1.0, 3.0, 7).unwrap();
    let feats: Vec<Tensor<f32>> = p.images.iter().map(|i| patch_features(i, 64, 64).unwrap()).collect();
    let refs: Vec<&Tensor<f32>> = feats.iter().collect();
    let cv = &build_cost_volume(&refs, &p.cameras, &cands, 1, Exec::default()).unwrap()[0];
    let valid: Vec<usize> = (0..cv.valid.len()).filter(|&i| cv.valid[i]).collect();
    let mean: Vec<f32> = (0..64).map(|m| valid.iter().map(|&i| cv.corr.data()[i * 64 + m]).sum::<f32>() / valid.len() as f32).collect();
    assert_eq!(argmax(&mean), 30);
    let est = regress_depth(cv, 0.005).unwrap();
    let median = {
        let mut d: Vec<f32> = valid.iter().map(|&i| est.data()[i]).collect();
        d.sort_by(f32::total_cmp);
        d[d.len() / 2] as f64
    };
    assert!((median - depth).abs() <= cv.spacing(), "{median} vs {depth}");
}
