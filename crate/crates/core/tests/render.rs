use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semfield::render::{render, render_backward, render_pose_path, RenderGrads, RenderOptions, RenderOutput};
use semfield::scene::{ring_cameras, synth_scene, CameraView, Gaussian, GaussianField, LinearHead, ParamGroup, SynthConfig};
use semfield::{Error, Tensor};

const I3: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn cam(w: usize, h: usize) -> CameraView {
    let f = 1.2 * w as f64;
    CameraView::new([[f, 0.0, w as f64 / 2.0], [0.0, f, h as f64 / 2.0], [0.0, 0.0, 1.0]], I3, [0.0; 3], 0.5, 10.0, w, h).unwrap()
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Gaussian<f64> {
    Gaussian {
        position: [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(1.8..2.6)],
        opacity_logit: rng.random_range(-1.0..2.0),
        log_scale: std::array::from_fn(|_| rng.random_range(0.05f64..0.2).ln()),
        rotation: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
        color: std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
        latent: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

fn field_from(gs: &[Gaussian<f64>], seg: &LinearHead<f64>) -> GaussianField<f64> {
    let mut f = GaussianField::empty(seg.in_dim, seg.out_dim, 0);
    f.seg_head = seg.clone();
    for g in gs {
        f.push(g.clone()).unwrap();
    }
    f
}

fn random_setup(n: usize, seed: u64) -> (Vec<Gaussian<f64>>, LinearHead<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gs = (0..n).map(|_| gaussian(&mut rng, 3)).collect();
    let head = LinearHead { in_dim: 3, out_dim: 2, weight: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(), bias: vec![0.1, -0.2] };
    (gs, head)
}

fn same(a: &RenderOutput<f64>, b: &RenderOutput<f64>) -> bool {
    a.color == b.color && a.feat_seg == b.feat_seg && a.feat_lang == b.feat_lang && a.depth == b.depth && a.alpha == b.alpha
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn storage_order_does_not_change_the_render(n in 1usize..20, seed in any::<u64>(), shuffle in any::<u64>()) {
        let (gs, head) = random_setup(n, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffled: Vec<Gaussian<f64>> = perm.iter().map(|&i| gs[i].clone()).collect();
        let c = cam(20, 16);
        let a = render(&field_from(&gs, &head), &c).unwrap();
        let b = render(&field_from(&shuffled, &head), &c).unwrap();
        prop_assert!(same(&a, &b));
    }

    #[test]
    fn alpha_is_bounded_and_grows_with_more_gaussians(n in 1usize..16, seed in any::<u64>()) {
        let (gs, head) = random_setup(n + 1, seed);
        let c = cam(20, 16);
        let fewer = render(&field_from(&gs[..n], &head), &c).unwrap();
        let more = render(&field_from(&gs, &head), &c).unwrap();
        for (&a, &b) in fewer.alpha.data().iter().zip(more.alpha.data()) {
            prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
            prop_assert!(b >= a - 1e-12, "{a} -> {b}");
        }
    }

    #[test]
    fn depth_stays_within_contributing_depths(n in 1usize..16, seed in any::<u64>()) {
        let (gs, head) = random_setup(n, seed);
        let c = cam(20, 16);
        let out = render(&field_from(&gs, &head), &c).unwrap();
        let (lo, hi) = gs.iter().map(|g| g.position[2]).fold((f64::INFINITY, 0.0f64), |(l, h), z| (l.min(z), h.max(z)));
        for (&d, &a) in out.depth.data().iter().zip(out.alpha.data()) {
            if a > 0.0 {
                // depth is alpha weighted, so the normalized value is bounded
                let z = d / a;
                prop_assert!(z >= lo - 1e-9 && z <= hi + 1e-9, "{z} not in [{lo}, {hi}]");
            }
        }
    }
}

fn wide(z: f64, opacity_logit: f64, color: f64) -> Gaussian<f64> {
    Gaussian { position: [0.0, 0.0, z], opacity_logit, log_scale: [3.0; 3], rotation: [1.0, 0.0, 0.0, 0.0], color: [color; 3], latent: vec![0.0] }
}

#[test]
fn two_coincident_layers_composite_by_hand() {
    let (front, back) = (wide(2.0, 0.0, 40.0), wide(2.0 + 1e-9, 40.0, -40.0));
    let head = LinearHead::zeros(1, 0);
    let out = render(&field_from(&[back, front], &head), &cam(8, 8)).unwrap();
    let centre = 4 * 8 + 4;
    // front α = 0.5 with color 1, back α = 1 with color 0
    assert!((out.color.data()[centre * 3] - 0.5).abs() < 1e-3, "{}", out.color.data()[centre * 3]);
    assert!((out.alpha.data()[centre] - 1.0).abs() < 1e-3);
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let (gs, head) = random_setup(6, 4);
    let f = field_from(&gs, &head);
    let c = cam(16, 12);
    let out = render(&f, &c).unwrap();
    let up = RenderGrads {
        color: Some(Tensor::zeros(out.color.dims())),
        feat_seg: Some(Tensor::zeros(out.feat_seg.dims())),
        depth: Some(Tensor::zeros(out.depth.dims())),
        alpha: Some(Tensor::zeros(out.alpha.dims())),
        ..Default::default()
    };
    let g = render_backward(&f, &c, &RenderOptions::default(), &up).unwrap();
    for p in ParamGroup::ALL {
        assert!(g.group(p).iter().all(|&v| v == 0.0), "{}", p.name());
    }
}

#[test]
fn color_gradient_of_one_pixel_is_its_weight() {
    let g0 = Gaussian { position: [0.02, -0.01, 2.0], opacity_logit: 0.3, log_scale: [0.1f64.ln(); 3], rotation: [1.0, 0.0, 0.0, 0.0], color: [0.2, -0.4, 1.0], latent: vec![0.5] };
    let f = field_from(&[g0.clone()], &LinearHead::zeros(1, 0));
    let c = cam(12, 12);
    let out = render(&f, &c).unwrap();
    let p = 6 * 12 + 5;
    let mut up = Tensor::zeros(out.color.dims());
    up.data_mut()[p * 3] = 1.0;
    let g = render_backward(&f, &c, &RenderOptions::default(), &RenderGrads { color: Some(up), ..Default::default() }).unwrap();
    // rendered color = w · sigmoid(logit), and w = alpha for a single Gaussian
    let s = 1.0 / (1.0 + (-g0.color[0]).exp());
    let w = out.alpha.data()[p];
    assert!(w > 0.0);
    assert!((g.group(ParamGroup::Colors)[0] - w * s * (1.0 - s)).abs() < 1e-12);
    assert_eq!(&g.group(ParamGroup::Colors)[1..], &[0.0, 0.0]);
}

#[test]
fn latent_gradient_needs_a_nonzero_head() {
    let (gs, _) = random_setup(5, 8);
    let f = field_from(&gs, &LinearHead::zeros(3, 2));
    let c = cam(16, 12);
    let out = render(&f, &c).unwrap();
    let up = RenderGrads { feat_seg: Some(Tensor::full(out.feat_seg.dims(), 1.0)), ..Default::default() };
    let g = render_backward(&f, &c, &RenderOptions::default(), &up).unwrap();
    assert!(g.group(ParamGroup::Latents).iter().all(|&v| v == 0.0));
    assert!(g.group(ParamGroup::SegBias).iter().any(|&v| v != 0.0));
}

#[test]
fn non_finite_parameter_names_the_gaussian() {
    let (mut gs, head) = random_setup(4, 9);
    gs[2].log_scale[1] = f64::NAN;
    match render(&field_from(&gs, &head), &cam(8, 8)) {
        Err(Error::NonFinite { index, .. }) => assert_eq!(index, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn pose_path_cases() {
    let s = synth_scene(&SynthConfig { width: 32, height: 32, ..Default::default() }).unwrap();
    let opts = RenderOptions::default();
    assert!(render_pose_path(&s.field, &[], &opts).unwrap().is_empty());
    let v = s.scene.views[0].camera.clone();
    let twice = render_pose_path(&s.field, &[v.clone(), v.clone()], &opts).unwrap();
    assert!(twice[0].color == twice[1].color && twice[0].alpha == twice[1].alpha);

    let n = s.field.len() as f64;
    let center: [f64; 3] = std::array::from_fn(|k| (0..s.field.len()).map(|i| s.field.position(i)[k] as f64).sum::<f64>() / n);
    let e = v.center();
    let radius = ((e[0] - center[0]).powi(2) + (e[1] - center[1]).powi(2) + (e[2] - center[2]).powi(2)).sqrt();
    let ring = ring_cameras(&v, center, radius, 20.0, 8, 0.0).unwrap();
    for (k, out) in render_pose_path(&s.field, &ring, &opts).unwrap().iter().enumerate() {
        assert!(out.alpha.data().iter().any(|&a| a > 0.0), "frame {k} is empty");
    }
}
