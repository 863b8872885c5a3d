//! JSON envelopes and payload encodings shared by the service and its
//! clients. See `docs/api.md` for the wire format.

use serde::{Deserialize, Serialize};

/// Binary mask as alternating run lengths over row-major pixels, starting
/// with a run of `false` (possibly empty).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u32>,
}

impl Rle {
    pub fn encode(mask: &[bool], height: usize, width: usize) -> Rle {
        assert_eq!(mask.len(), height * width, "mask size");
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &m in mask {
            if m != current {
                counts.push(run);
                run = 0;
                current = m;
            }
            run += 1;
        }
        counts.push(run);
        Rle { height, width, counts }
    }

    /// Inverse of [`Rle::encode`]; `None` if the runs do not cover the mask
    /// exactly.
    pub fn decode(&self) -> Option<Vec<bool>> {
        let n = self.height * self.width;
        let mut out = Vec::with_capacity(n);
        for (i, &c) in self.counts.iter().enumerate() {
            if out.len() + c as usize > n {
                return None;
            }
            out.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
        }
        (out.len() == n).then_some(out)
    }

    pub fn area(&self) -> usize {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as usize).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMeta {
    pub name: String,
    pub split: String,
    /// Row-major `[R|T]`, world to camera.
    pub pose: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub width: usize,
    pub height: usize,
    /// Row-major 3×3 intrinsics at the served resolution.
    pub intrinsics: Vec<f64>,
    pub near: f64,
    pub far: f64,
    pub gaussians: usize,
    pub latent_dim: usize,
    pub seg_dim: usize,
    pub lang_dim: usize,
    pub thresholds: [f64; 3],
    pub views: Vec<ViewMeta>,
    /// Label-set ids usable with `/query`, with their category names.
    pub label_sets: Vec<LabelSetMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSetMeta {
    pub id: String,
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderResponse {
    pub width: usize,
    pub height: usize,
    /// Base64 RGB PNG.
    pub image_png: String,
    /// Base64 8-bit grayscale PNG of accumulated opacity.
    pub alpha_png: String,
    /// Base64 8-bit grayscale PNG of normalized depth: white at `near`,
    /// black at `far` and wherever nothing was hit.
    pub depth_png: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub pose: Vec<f64>,
    /// `[x, y]` in pixels of the served resolution.
    pub pixel: [i64; 2],
    #[serde(default)]
    pub thresholds: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMask {
    /// `small`, `medium` or `large`.
    pub level: String,
    pub threshold: f64,
    pub area: usize,
    pub confidence: f64,
    pub rle: Rle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptResponse {
    pub width: usize,
    pub height: usize,
    /// Set when the prompted pixel has zero opacity; masks are then empty.
    pub no_surface: bool,
    pub masks: Vec<PromptMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEmbedding {
    pub name: String,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub pose: Vec<f64>,
    /// Id from `/scene/meta`; ignored when `embeddings` is given.
    #[serde(default)]
    pub label_set: Option<String>,
    #[serde(default)]
    pub embeddings: Option<Vec<NamedEmbedding>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub index: usize,
    pub name: String,
    pub color: [u8; 3],
    /// Pixels assigned this label.
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub width: usize,
    pub height: usize,
    /// Base64 RGB PNG, each pixel colored by its label.
    pub label_map_png: String,
    pub legend: Vec<LegendEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    /// Only on 500 responses; the same id is logged server side.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic_id: Option<String>,
}

/// Color of label `k`, stable across poses and requests.
pub fn label_color(k: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 12] = [
        [174, 199, 232],
        [152, 223, 138],
        [255, 187, 120],
        [214, 39, 40],
        [148, 103, 189],
        [140, 86, 75],
        [227, 119, 194],
        [127, 127, 127],
        [188, 189, 34],
        [23, 190, 207],
        [31, 119, 180],
        [255, 127, 14],
    ];
    PALETTE[k % PALETTE.len()]
}

/// Parses a comma-separated list of 12 floats.
pub fn parse_pose(text: &str) -> Result<Vec<f64>, String> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| format!("pose: {e}"))?;
    if vals.len() != 12 {
        return Err(format!("pose needs 12 comma-separated floats, got {}", vals.len()));
    }
    Ok(vals)
}

/// World-to-camera pose of an orbit camera looking at `target`.
/// Azimuth and elevation in degrees; azimuth 0, elevation 0 puts the camera
/// at `target + (0, 0, radius)` looking down −z with +y up.
pub fn orbit_pose(azimuth_deg: f64, elevation_deg: f64, radius: f64, target: [f64; 3]) -> [f64; 12] {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let dir = [el.cos() * az.sin(), el.sin(), el.cos() * az.cos()];
    let eye = [target[0] + radius * dir[0], target[1] + radius * dir[1], target[2] + radius * dir[2]];
    // camera axes in world: x right, y down, z forward
    let fwd = dir.map(|v| -v);
    let up = [-el.sin() * az.sin(), el.cos(), -el.sin() * az.cos()];
    let right = [fwd[1] * up[2] - fwd[2] * up[1], fwd[2] * up[0] - fwd[0] * up[2], fwd[0] * up[1] - fwd[1] * up[0]];
    let down = up.map(|v| -v);
    let r = [right, down, fwd];
    let t: Vec<f64> = r.iter().map(|row| -(row[0] * eye[0] + row[1] * eye[1] + row[2] * eye[2])).collect();
    [
        r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_roundtrip_and_leading_true() {
        let m = vec![true, true, false, true, false, false];
        let r = Rle::encode(&m, 2, 3);
        assert_eq!(r.counts, vec![0, 2, 1, 1, 2]);
        assert_eq!(r.decode().unwrap(), m);
        assert_eq!(r.area(), 3);
        let empty = Rle::encode(&[false; 4], 2, 2);
        assert_eq!(empty.counts, vec![4]);
        assert_eq!(empty.area(), 0);
    }

    #[test]
    fn rle_rejects_bad_runs() {
        assert!(Rle { height: 2, width: 2, counts: vec![1, 1] }.decode().is_none());
        assert!(Rle { height: 1, width: 2, counts: vec![1, 5] }.decode().is_none());
    }

    #[test]
    fn pose_parsing() {
        let p = parse_pose("1,0,0,0, 0,1,0,0, 0,0,1,2.5").unwrap();
        assert_eq!(p[11], 2.5);
        assert!(parse_pose("1,2,3").is_err());
        assert!(parse_pose("1,0,0,0,0,1,0,0,0,0,1,x").is_err());
    }

    fn apply(p: &[f64; 12], x: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|r| p[4 * r] * x[0] + p[4 * r + 1] * x[1] + p[4 * r + 2] * x[2] + p[4 * r + 3])
    }

    #[test]
    fn orbit_axis_case() {
        let p = orbit_pose(0.0, 0.0, 3.0, [0.0; 3]);
        // camera center maps to the origin of camera space
        let c = apply(&p, [0.0, 0.0, 3.0]);
        assert!(c.iter().all(|v| v.abs() < 1e-12));
        // target lies straight ahead
        let t = apply(&p, [0.0; 3]);
        assert!(t[0].abs() < 1e-12 && t[1].abs() < 1e-12 && (t[2] - 3.0).abs() < 1e-12);
        // world +y appears up, i.e. negative image y
        assert!(apply(&p, [0.0, 1.0, 0.0])[1] < 0.0);
    }

    #[test]
    fn orbit_rotation_is_orthonormal_and_right_handed() {
        for (az, el) in [(30.0, 20.0), (-120.0, -45.0), (200.0, 80.0)] {
            let p = orbit_pose(az, el, 2.0, [0.1, -0.2, 0.3]);
            let r = [[p[0], p[1], p[2]], [p[4], p[5], p[6]], [p[8], p[9], p[10]]];
            for a in 0..3 {
                for b in 0..3 {
                    let d: f64 = (0..3).map(|k| r[a][k] * r[b][k]).sum();
                    assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
            let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
                + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
            assert!((det - 1.0).abs() < 1e-12);
            let t = apply(&p, [0.1, -0.2, 0.3]);
            assert!((t[2] - 2.0).abs() < 1e-12);
        }
        assert_eq!(orbit_pose(10.0, 5.0, 1.0, [0.0; 3]), orbit_pose(10.0, 5.0, 1.0, [0.0; 3]));
    }
}
