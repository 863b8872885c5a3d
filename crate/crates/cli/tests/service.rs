use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use http_body_util::BodyExt;
use tower::ServiceExt;

use semfield::render::{render_with, RenderOptions};
use semfield::scene::{synth_scene, SynthConfig};
use semfield::tensor::decode_png;
use semfield::Tensor;
use semfield_cli::api::*;
use semfield_cli::commands::{render_cameras, Cameras};
use semfield_cli::service::{router, AppState, ServiceConfig, BIND_ENV, NO_SURFACE_ALPHA};

struct Fixture {
    _dir: tempfile::TempDir,
    state: Arc<AppState>,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let s = synth_scene(&SynthConfig { width: 48, height: 40, ..Default::default() }).unwrap();
    s.write(dir.path()).unwrap();
    let cfg = ServiceConfig::new(dir.path(), dir.path().join("field.sspt"));
    let state = Arc::new(AppState::load(&cfg).unwrap());
    Fixture { _dir: dir, state }
}

async fn send(f: &Fixture, req: Request<Body>) -> (StatusCode, Option<String>, Vec<u8>) {
    let res = router(f.state.clone()).oneshot(req).await.unwrap();
    let status = res.status();
    let ct = res.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap().to_string());
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, ct, body)
}

async fn get(f: &Fixture, uri: &str) -> (StatusCode, Option<String>, Vec<u8>) {
    send(f, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(f: &Fixture, uri: &str, body: impl Into<Body>) -> (StatusCode, Option<String>, Vec<u8>) {
    send(f, Request::post(uri).header(header::CONTENT_TYPE, "application/json").body(body.into()).unwrap()).await
}

fn pose_query(p: &[f64]) -> String {
    p.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn pose0(f: &Fixture) -> Vec<f64> {
    f.state.scene.views[0].camera.pose12().to_vec()
}

fn error_of(body: &[u8]) -> ErrorBody {
    serde_json::from_slice(body).unwrap()
}

#[tokio::test]
async fn meta_describes_scene() {
    let f = fixture();
    let (status, ct, body) = get(&f, "/scene/meta").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ct.as_deref(), Some("application/json"));
    let m: SceneMeta = serde_json::from_slice(&body).unwrap();
    assert_eq!((m.width, m.height), (48, 40));
    assert_eq!(m.intrinsics.len(), 9);
    assert_eq!(m.gaussians, f.state.field.len());
    assert_eq!(m.views.len(), f.state.scene.views.len());
    assert_eq!(m.views[0].pose, pose0(&f));
    assert_eq!(m.label_sets.len(), 1);
    assert_eq!(m.label_sets[0].names, f.state.labels.as_ref().unwrap().names());
}

#[tokio::test]
async fn render_returns_pngs_of_served_size() {
    let f = fixture();
    let (status, _, body) = get(&f, &format!("/render?pose={}", pose_query(&pose0(&f)))).await;
    assert_eq!(status, StatusCode::OK);
    let r: RenderResponse = serde_json::from_slice(&body).unwrap();
    let img: Tensor<f32> = decode_png(&B64.decode(&r.image_png).unwrap()).unwrap();
    let alpha: Tensor<f32> = decode_png(&B64.decode(&r.alpha_png).unwrap()).unwrap();
    assert_eq!(img.dims(), [40, 48, 3]);
    assert_eq!(&alpha.dims()[..2], [40, 48]);
    let reference = render_with(&f.state.field, &f.state.scene.views[0].camera, &RenderOptions::color_only()).unwrap();
    let max_err = img.data().iter().zip(reference.color.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(max_err <= 0.5 / 255.0 + 1e-6, "{max_err}");
}

fn render_bytes(body: &[u8]) -> Vec<u8> {
    let r: RenderResponse = serde_json::from_slice(body).unwrap();
    B64.decode(r.image_png).unwrap()
}

#[tokio::test]
async fn render_matches_cli_bitwise() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let scene_dir = f._dir.path();
    let scene = semfield::scene::load_scene(scene_dir).unwrap();
    let field = semfield::GaussianField::load(scene_dir.join("field.sspt")).unwrap();
    let views = render_cameras(&scene, &field, &Cameras::Views, out.path()).unwrap();
    for (k, v) in scene.views.iter().enumerate().take(3) {
        let (status, _, body) = get(&f, &format!("/render?pose={}", pose_query(&v.camera.pose12()))).await;
        assert_eq!(status, StatusCode::OK);
        let served = render_bytes(&body);
        assert_eq!(served, std::fs::read(&views[k]).unwrap(), "view {k}");
        // repeated requests are identical too
        let (_, _, again) = get(&f, &format!("/render?pose={}", pose_query(&v.camera.pose12()))).await;
        assert_eq!(render_bytes(&again), served);
    }
    let orbit = orbit_pose(30.0, 20.0, 2.5, [0.0; 3]);
    let single = render_cameras(&scene, &field, &Cameras::Pose(orbit.to_vec()), out.path()).unwrap();
    let (_, _, body) = get(&f, &format!("/render?pose={}", pose_query(&orbit))).await;
    assert_eq!(render_bytes(&body), std::fs::read(&single[0]).unwrap());
}

#[tokio::test]
async fn render_rejects_bad_poses() {
    let f = fixture();
    let (status, _, body) = get(&f, "/render?pose=1,2,3").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(error_of(&body).error.contains("12"));
    assert_eq!(get(&f, "/render").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&f, "/render?pose=a,b").await.0, StatusCode::BAD_REQUEST);
    let mut skew = pose0(&f);
    skew[0] += 0.5;
    let (status, _, body) = get(&f, &format!("/render?pose={}", pose_query(&skew))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(error_of(&body).diagnostic_id.is_none());
}

#[tokio::test]
async fn pca_serves_png_per_head() {
    let f = fixture();
    let q = pose_query(&pose0(&f));
    for head in ["seg", "lang"] {
        let (status, ct, body) = get(&f, &format!("/pca?head={head}&pose={q}")).await;
        assert_eq!(status, StatusCode::OK, "{head}");
        assert_eq!(ct.as_deref(), Some("image/png"));
        let img: Tensor<f32> = decode_png(&body).unwrap();
        assert_eq!(img.dims(), [40, 48, 3]);
    }
    assert_eq!(get(&f, &format!("/pca?head=depth&pose={q}")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&f, "/pca?head=seg").await.0, StatusCode::BAD_REQUEST);
}

fn surface_and_empty_pixels(f: &Fixture) -> ([i64; 2], [i64; 2]) {
    let r = render_with(&f.state.field, &f.state.scene.views[0].camera, &RenderOptions::color_only()).unwrap();
    let a = r.alpha.data();
    let w = r.width();
    let best = (0..a.len()).max_by(|&i, &j| a[i].total_cmp(&a[j])).unwrap();
    let empty = (0..a.len()).find(|&i| a[i] < NO_SURFACE_ALPHA).expect("synthetic views have background");
    ([(best % w) as i64, (best / w) as i64], [(empty % w) as i64, (empty / w) as i64])
}

#[tokio::test]
async fn prompt_returns_nested_rle_masks() {
    let f = fixture();
    let (hit, _) = surface_and_empty_pixels(&f);
    let req = PromptRequest { pose: pose0(&f), pixel: hit, thresholds: None };
    let (status, _, body) = post(&f, "/prompt", serde_json::to_vec(&req).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let r: PromptResponse = serde_json::from_slice(&body).unwrap();
    assert!(!r.no_surface);
    let levels: Vec<&str> = r.masks.iter().map(|m| m.level.as_str()).collect();
    assert_eq!(levels, ["small", "medium", "large"]);
    let masks: Vec<Vec<bool>> = r.masks.iter().map(|m| m.rle.decode().unwrap()).collect();
    let idx = hit[1] as usize * r.width + hit[0] as usize;
    for (m, meta) in masks.iter().zip(&r.masks) {
        assert!(m[idx], "prompt pixel inside its own mask");
        assert_eq!(meta.area, m.iter().filter(|&&b| b).count());
        assert_eq!((meta.rle.height, meta.rle.width), (40, 48));
    }
    for k in 0..2 {
        assert!(masks[k].iter().zip(&masks[k + 1]).all(|(&a, &b)| !a || b));
    }
    assert_eq!(r.masks[0].threshold, 0.85);
}

#[tokio::test]
async fn prompt_on_empty_space_flags_no_surface() {
    let f = fixture();
    let (_, miss) = surface_and_empty_pixels(&f);
    let req = PromptRequest { pose: pose0(&f), pixel: miss, thresholds: None };
    let (status, _, body) = post(&f, "/prompt", serde_json::to_vec(&req).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let r: PromptResponse = serde_json::from_slice(&body).unwrap();
    assert!(r.no_surface);
    assert!(r.masks.iter().all(|m| m.area == 0 && m.rle.decode().unwrap().iter().all(|b| !b)));
}

#[tokio::test]
async fn prompt_errors() {
    let f = fixture();
    let (status, _, _) = post(&f, "/prompt", "{not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _, _) = post(&f, "/prompt", r#"{"pose": [1, 2]}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    for pixel in [[-1, 0], [48, 0], [0, 40]] {
        let req = PromptRequest { pose: pose0(&f), pixel, thresholds: None };
        let (status, _, _) = post(&f, "/prompt", serde_json::to_vec(&req).unwrap()).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{pixel:?}");
    }
    let (hit, _) = surface_and_empty_pixels(&f);
    let req = PromptRequest { pose: pose0(&f), pixel: hit, thresholds: Some([0.5, 0.7, 0.9]) };
    let (status, _, _) = post(&f, "/prompt", serde_json::to_vec(&req).unwrap()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let big = vec![b' '; 2 << 20];
    assert_eq!(post(&f, "/prompt", big).await.0, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn query_labels_every_pixel() {
    let f = fixture();
    let req = QueryRequest { pose: pose0(&f), label_set: None, embeddings: None };
    let (status, _, body) = post(&f, "/query", serde_json::to_vec(&req).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let r: QueryResponse = serde_json::from_slice(&body).unwrap();
    let names = f.state.labels.as_ref().unwrap().names();
    assert_eq!(r.legend.len(), names.len());
    assert_eq!(r.legend.iter().map(|e| e.pixels).sum::<usize>(), 40 * 48);
    assert!(r.legend.iter().enumerate().all(|(k, e)| e.index == k && e.color == label_color(k) && e.name == names[k]));
    let img: Tensor<f32> = decode_png(&B64.decode(&r.label_map_png).unwrap()).unwrap();
    assert_eq!(img.dims(), [40, 48, 3]);

    let named = QueryRequest { pose: pose0(&f), label_set: Some("default".into()), embeddings: None };
    let (_, _, again) = post(&f, "/query", serde_json::to_vec(&named).unwrap()).await;
    assert_eq!(again, body);
}

#[tokio::test]
async fn query_with_custom_embeddings() {
    let f = fixture();
    let d = f.state.field.lang_dim();
    let ls = f.state.labels.as_ref().unwrap();
    let embeddings = (0..2)
        .map(|k| NamedEmbedding { name: ls.names()[k].clone(), embedding: ls.embedding(k).to_vec() })
        .collect();
    let req = QueryRequest { pose: pose0(&f), label_set: None, embeddings: Some(embeddings) };
    let (status, _, body) = post(&f, "/query", serde_json::to_vec(&req).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let r: QueryResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(r.legend.len(), 2);

    let wrong = vec![NamedEmbedding { name: "x".into(), embedding: vec![1.0; d + 1] }];
    let req = QueryRequest { pose: pose0(&f), label_set: None, embeddings: Some(wrong) };
    assert_eq!(post(&f, "/query", serde_json::to_vec(&req).unwrap()).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let req = QueryRequest { pose: pose0(&f), label_set: Some("nope".into()), embeddings: None };
    assert_eq!(post(&f, "/query", serde_json::to_vec(&req).unwrap()).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn unknown_paths_are_404() {
    let f = fixture();
    let (status, _, body) = get(&f, "/nothing/here").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(!error_of(&body).error.is_empty());
}

#[test]
fn resolution_cap_downsamples() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth_scene(&SynthConfig { width: 64, height: 48, ..Default::default() }).unwrap();
    s.write(dir.path()).unwrap();
    let mut cfg = ServiceConfig::new(dir.path(), dir.path().join("field.sspt"));
    cfg.max_resolution = 32;
    let state = AppState::load(&cfg).unwrap();
    assert_eq!((state.camera.width, state.camera.height), (32, 24));
    cfg.max_resolution = 8;
    assert!(cfg.validate().is_err());
}

#[test]
fn bind_address_from_environment() {
    let cfg = ServiceConfig::new(Path::new("s"), Path::new("f"));
    std::env::set_var(BIND_ENV, "0.0.0.0:9191");
    let env = cfg.clone().with_env();
    std::env::set_var(BIND_ENV, "not an address");
    let bad = cfg.clone().with_env();
    std::env::remove_var(BIND_ENV);
    assert_eq!(env.unwrap().bind.port(), 9191);
    assert!(bad.is_err());
    assert!(cfg.validate().is_ok());
}
