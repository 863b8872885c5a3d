use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_t(dims: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(dims, |_| rng.random_range(lo..hi))
}

fn binary(dims: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(dims, |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 })
}

/// Max relative error of the analytic gradient against central differences.
fn fd_check(x: &Tensor<f64>, grad: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64, h: f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut a = x.clone();
        a.data_mut()[i] += h;
        let mut b = x.clone();
        b.data_mut()[i] -= h;
        let num = (f(&a) - f(&b)) / (2.0 * h);
        let ana = grad.data()[i];
        let err = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn constants() {
    assert_eq!(DICE_WEIGHT, 1.0 / 20.0);
    assert_eq!(LAMBDA1, 0.05);
    assert_eq!(LAMBDA_MASK, 0.2);
    let cfg = LossConfig::default();
    assert_eq!((cfg.lambda1, cfg.lambda_mask), (0.05, 0.2));
}

#[test]
fn photometric_examples() {
    let t = rand_t(&[4, 5, 3], 0.0, 0.8, 1);
    assert_eq!(photometric_loss(&t, &t, LAMBDA1, None).unwrap().value, 0.0);
    let r = t.map(|v| v + 0.1);
    let l = photometric_loss(&r, &t, LAMBDA1, None).unwrap();
    assert!((l.value - 0.1).abs() < 1e-12);
    assert!(l.grad.data().iter().all(|&g| (g - 1.0 / 60.0).abs() < 1e-15));
    let hook = |r: &Tensor<f64>, _: &Tensor<f64>| (2.0, Tensor::full(r.dims(), 1.0));
    let l = photometric_loss(&r, &t, 0.05, Some(&hook)).unwrap();
    assert!((l.value - 0.2).abs() < 1e-12);
    assert!((l.grad.data()[0] - (1.0 / 60.0 + 0.05)).abs() < 1e-15);
    assert!(photometric_loss(&r, &Tensor::zeros(&[4, 5, 2]), 0.05, None).is_err());
}

#[test]
fn photometric_gradient() {
    let r = rand_t(&[3, 3, 3], 0.0, 1.0, 2);
    let t = rand_t(&[3, 3, 3], 0.0, 1.0, 3);
    let l = photometric_loss(&r, &t, 0.05, None).unwrap();
    assert!(fd_check(&r, &l.grad, |x| photometric_loss(x, &t, 0.05, None).unwrap().value, 1e-7) < 1e-5);
}

#[test]
fn cosine_examples() {
    let t = rand_t(&[3, 4, 5], 0.1, 1.0, 4);
    assert!(cosine_distill_loss(&t, &t).unwrap().value.abs() < 1e-12);
    let neg = t.map(|v| -v);
    assert!((cosine_distill_loss(&neg, &t).unwrap().value - 2.0).abs() < 1e-12);
    let a = Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 3.0]).unwrap();
    let b = Tensor::new(vec![1, 2, 2], vec![0.0, 2.0, 5.0, 0.0]).unwrap();
    assert!((cosine_distill_loss(&a, &b).unwrap().value - 1.0).abs() < 1e-12);
}

#[test]
fn cosine_skips_zero_targets() {
    let p = rand_t(&[2, 2, 3], 0.1, 1.0, 5);
    let mut t = p.clone();
    t.data_mut()[..3].iter_mut().for_each(|v| *v = 0.0);
    t.data_mut()[3..6].iter_mut().for_each(|v| *v = -*v);
    let l = cosine_distill_loss(&p, &t).unwrap();
    assert_eq!(l.skipped, 1);
    assert!((l.value - 2.0 / 3.0).abs() < 1e-12);
    assert!(l.grad.data()[..3].iter().all(|&g| g == 0.0));
    let all_zero = cosine_distill_loss(&p, &Tensor::zeros(&[2, 2, 3])).unwrap();
    assert_eq!((all_zero.value, all_zero.skipped), (0.0, 4));
}

#[test]
fn cosine_gradient() {
    let p = rand_t(&[3, 3, 4], -1.0, 1.0, 6);
    let t = rand_t(&[3, 3, 4], -1.0, 1.0, 7);
    let l = cosine_distill_loss(&p, &t).unwrap();
    assert!(fd_check(&p, &l.grad, |x| cosine_distill_loss(x, &t).unwrap().value, 1e-6) < 1e-5);
}

#[test]
fn focal_examples() {
    let p = Tensor::new(vec![1], vec![0.5]).unwrap();
    let y = Tensor::new(vec![1], vec![1.0]).unwrap();
    let v = focal_loss(&p, &y, 0.25, 2.0).unwrap().value;
    assert!((v - 0.043321698784996582).abs() < 1e-12);
    let near = Tensor::new(vec![1], vec![1.0 - 1e-9]).unwrap();
    assert!(focal_loss(&near, &y, 0.25, 2.0).unwrap().value < 1e-12);

    let p = rand_t(&[20], 0.01, 0.99, 8);
    let y = binary(&[20], 9);
    let bce: f64 = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
        .sum::<f64>()
        / 20.0;
    assert!((focal_loss(&p, &y, 0.5, 0.0).unwrap().value - 0.5 * bce).abs() < 1e-12);
}

#[test]
fn focal_gradient() {
    let p = rand_t(&[4, 4], 0.05, 0.95, 10);
    let y = binary(&[4, 4], 11);
    let l = focal_loss(&p, &y, 0.25, 2.0).unwrap();
    assert!(fd_check(&p, &l.grad, |x| focal_loss(x, &y, 0.25, 2.0).unwrap().value, 1e-6) < 1e-5);
}

#[test]
fn dice_examples() {
    let y = Tensor::new(vec![6], vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    assert!(dice_loss(&y, &y).unwrap().value.abs() < 1e-12);
    let x = Tensor::new(vec![6], vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    // ε = 1 in both numerator and denominator: 1 − (4 + 1)/(6 + 1)
    assert!((dice_loss(&x, &y).unwrap().value - 2.0 / 7.0).abs() < 1e-12);
    let big = 10_000;
    let a = Tensor::from_fn(&[2 * big], |i| if i < big { 1.0 } else { 0.0 });
    let b = Tensor::from_fn(&[2 * big], |i| if i >= big { 1.0 } else { 0.0 });
    assert!((dice_loss(&a, &b).unwrap().value - 1.0).abs() < 1e-4);
}

#[test]
fn dice_gradient() {
    let x = rand_t(&[3, 5], 0.0, 1.0, 12);
    let y = binary(&[3, 5], 13);
    let l = dice_loss(&x, &y).unwrap();
    assert!(fd_check(&x, &l.grad, |t| dice_loss(t, &y).unwrap().value, 1e-6) < 1e-5);
}

#[test]
fn mask_loss_combines_parts() {
    assert!((combine_mask(0.2, 0.4) - 0.22).abs() < 1e-15);
    let y = binary(&[4, 4], 14);
    let perfect = y.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    assert!(mask_loss(&perfect, &y, 0.25, 2.0).unwrap().value < 1e-6);
    let p = rand_t(&[4, 4], 0.05, 0.95, 15);
    let m = mask_loss(&p, &y, 0.25, 2.0).unwrap();
    let f = focal_loss(&p, &y, 0.25, 2.0).unwrap().value;
    let d = dice_loss(&p, &y).unwrap().value;
    assert_eq!(m.value, f + d / 20.0);
    assert!(fd_check(&p, &m.grad, |x| mask_loss(x, &y, 0.25, 2.0).unwrap().value, 1e-6) < 1e-5);
}

fn partition_masks(h: usize, w: usize, k: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<usize> = (0..h * w).map(|_| rng.random_range(0..k + 1)).collect();
    // id k means "no mask"
    Tensor::from_fn(&[k, h, w], |i| if ids[i % (h * w)] == i / (h * w) { 1.0 } else { 0.0 })
}

#[test]
fn pooling_examples() {
    let f = Tensor::new(vec![1, 3, 1], vec![0.0, 2.0, 7.0]).unwrap();
    let m = Tensor::new(vec![1, 1, 3], vec![1.0, 1.0, 0.0]).unwrap();
    let out = hierarchical_pool(&f, &[&m]).unwrap();
    assert_eq!(out[0].data(), &[1.0, 1.0, 7.0]);

    let c = Tensor::<f64>::full(&[4, 4, 3], 0.3);
    let ms = partition_masks(4, 4, 3, 1);
    assert_eq!(hierarchical_pool(&c, &[&ms, &ms, &ms]).unwrap()[2], c);

    let empty = Tensor::<f64>::zeros(&[2, 4, 4]);
    assert_eq!(hierarchical_pool(&c, &[&empty]).unwrap()[0], c);
    assert!(hierarchical_pool(&c, &[&Tensor::zeros(&[1, 3, 4])]).is_err());
}

#[test]
fn pooling_overlap_last_writer_wins() {
    let f = Tensor::new(vec![1, 3, 1], vec![0.0, 3.0, 9.0]).unwrap();
    let m = Tensor::new(vec![2, 1, 3], vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
    let out = hierarchical_pool(&f, &[&m]).unwrap();
    assert_eq!(out[0].data(), &[1.5, 6.0, 6.0]);
}

proptest! {
    #[test]
    fn pooling_idempotent_and_mean_preserving(seed in 0u64..1000) {
        let f = rand_t(&[5, 6, 3], -1.0, 1.0, seed);
        let ms = partition_masks(5, 6, 4, seed + 1);
        let once = hierarchical_pool(&f, &[&ms]).unwrap().remove(0);
        let twice = hierarchical_pool(&once, &[&ms]).unwrap().remove(0);
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for mask in ms.data().chunks_exact(30) {
            for ch in 0..3 {
                let sel: Vec<usize> = (0..30).filter(|&p| mask[p] > 0.5).collect();
                if sel.is_empty() { continue; }
                let before: f64 = sel.iter().map(|&p| f.data()[p * 3 + ch]).sum::<f64>() / sel.len() as f64;
                let after: f64 = sel.iter().map(|&p| once.data()[p * 3 + ch]).sum::<f64>() / sel.len() as f64;
                prop_assert!((before - after).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_ranges(seed in 0u64..1000) {
        let p = rand_t(&[3, 3, 4], -1.0, 1.0, seed);
        let t = rand_t(&[3, 3, 4], -1.0, 1.0, seed + 7);
        let c = cosine_distill_loss(&p, &t).unwrap().value;
        prop_assert!((0.0..=2.0).contains(&c));
        let x = rand_t(&[9], 0.0, 1.0, seed);
        let y = binary(&[9], seed + 3);
        let d = dice_loss(&x, &y).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(focal_loss(&x, &y, 0.25, 2.0).unwrap().value >= 0.0);
    }
}

fn render_stub(color: Tensor<f64>, seg: Tensor<f64>, lang: Tensor<f64>) -> crate::render::RenderOutput<f64> {
    let (h, w, _) = color.hwc().unwrap();
    crate::render::RenderOutput {
        color,
        feat_seg: seg,
        feat_lang: lang,
        depth: Tensor::zeros(&[h, w]),
        alpha: Tensor::zeros(&[h, w]),
        dominant: None,
    }
}

#[test]
fn stage1_examples() {
    let img = rand_t(&[4, 4, 3], 0.0, 1.0, 20);
    let seg = rand_t(&[4, 4, 5], -1.0, 1.0, 21);
    let r = render_stub(img.clone(), seg.clone(), Tensor::zeros(&[4, 4, 0]));
    let cfg = LossConfig::default();
    let t = Stage1Targets { image: &img, seg: &seg, masks: None, prompts: &[] };
    assert!(stage1_loss(&r, &t, &cfg, None).unwrap().total.abs() < 1e-12);

    let mut zero_seg = seg.clone();
    zero_seg.data_mut()[..5].iter_mut().for_each(|v| *v = 0.0);
    let t = Stage1Targets { image: &img, seg: &zero_seg, masks: None, prompts: &[] };
    let l = stage1_loss(&r, &t, &cfg, None).unwrap();
    assert_eq!(l.skipped, 1);
    assert!(l.total.abs() < 1e-12);
}

#[test]
fn stage1_mask_weight_in_gradient() {
    let img = rand_t(&[5, 5, 3], 0.0, 1.0, 22);
    let seg = rand_t(&[5, 5, 4], -1.0, 1.0, 23);
    let target = rand_t(&[5, 5, 4], -1.0, 1.0, 24);
    let masks: Vec<Tensor<f64>> = (0..3).map(|k| partition_masks(5, 5, 3 - k, 30 + k as u64)).collect();
    let masks = [&masks[0], &masks[1], &masks[2]];
    let prompts = [(1, 1), (3, 2), (4, 4)];
    let r = render_stub(img.clone(), seg.clone(), Tensor::zeros(&[5, 5, 0]));
    let cfg = LossConfig { prompt_sharpness: 0.5, ..Default::default() };
    let with = Stage1Targets { image: &img, seg: &target, masks: Some(masks), prompts: &prompts };
    let without = Stage1Targets { image: &img, seg: &target, masks: None, prompts: &[] };
    let a = stage1_loss(&r, &with, &cfg, None).unwrap();
    let b = stage1_loss(&r, &without, &cfg, None).unwrap();
    let (_, mg, pairs) = prompt_mask_loss(&seg, masks, &prompts, &cfg).unwrap();
    assert!(pairs > 0);
    let ga = a.grads.feat_seg.as_ref().unwrap().data();
    let gb = b.grads.feat_seg.as_ref().unwrap().data();
    for i in 0..ga.len() {
        assert!((ga[i] - gb[i] - 0.2 * mg.data()[i]).abs() < 1e-12);
    }
    assert!((a.total - b.total - 0.2 * a.term("seg_mask").unwrap()).abs() < 1e-12);
}

#[test]
fn prompt_mask_gradient() {
    let seg = rand_t(&[4, 4, 3], -1.0, 1.0, 40);
    let ms: Vec<Tensor<f64>> = (0..3).map(|k| partition_masks(4, 4, 3 - k, 50 + k as u64)).collect();
    let masks = [&ms[0], &ms[1], &ms[2]];
    let prompts = [(0, 0), (2, 3)];
    let cfg = LossConfig { prompt_sharpness: 0.5, ..Default::default() };
    let (_, g, _) = prompt_mask_loss(&seg, masks, &prompts, &cfg).unwrap();
    let err = fd_check(&seg, &g, |x| prompt_mask_loss(x, masks, &prompts, &cfg).unwrap().0, 1e-6);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn stage2_examples() {
    let lang = rand_t(&[4, 4, 3], -1.0, 1.0, 60);
    let r = render_stub(Tensor::zeros(&[4, 4, 3]), Tensor::zeros(&[4, 4, 0]), lang.clone());
    let cfg = LossConfig::default();
    assert!(stage2_loss(&r, &[&lang], &cfg).unwrap().total.abs() < 1e-12);

    let c = Tensor::<f64>::full(&[4, 4, 3], 0.5);
    let ms = partition_masks(4, 4, 2, 61);
    let pooled = hierarchical_pool(&c, &[&ms, &ms, &ms]).unwrap();
    let r = render_stub(Tensor::zeros(&[4, 4, 3]), Tensor::zeros(&[4, 4, 0]), lang);
    let off = stage2_loss(&r, &[&c], &cfg).unwrap().total;
    let on = stage2_loss(&r, &pooled.iter().collect::<Vec<_>>(), &cfg).unwrap().total;
    assert!((off - on).abs() < 1e-12);

    let a = Tensor::new(vec![1, 1, 2], vec![1.0, 0.0]).unwrap();
    let b = Tensor::new(vec![1, 1, 2], vec![0.0, 1.0]).unwrap();
    let r = render_stub(Tensor::zeros(&[1, 1, 3]), Tensor::zeros(&[1, 1, 0]), a);
    assert!((stage2_loss(&r, &[&b], &cfg).unwrap().total - 1.0).abs() < 1e-12);
    assert!(stage2_loss(&r, &[], &cfg).is_err());
}
