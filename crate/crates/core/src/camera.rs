//! Pinhole cameras, 6D rotations, pixel-aligned Plücker ray maps and
//! trajectory segmentation.
//!
//! Poses are camera-to-world: `x_world = R * x_cam + t`, so `t` is the camera
//! center. Pixel rays pass through pixel centers `(u + 0.5, v + 0.5)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PatchFeatureMap;

pub type Vec3 = [f64; 3];
/// Row-major 3x3 matrix.
pub type Mat3 = [[f64; 3]; 3];

const ORTHO_TOL: f64 = 1e-6;
const DEGENERATE_NORM: f64 = 1e-8;

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn det(m: &Mat3) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}

fn column(m: &Mat3, j: usize) -> Vec3 {
    [m[0][j], m[1][j], m[2][j]]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::arg(format!("invalid intrinsics {self:?}")));
        }
        Ok(())
    }
}

/// Two column seeds of a rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rot6D {
    pub a1: Vec3,
    pub a2: Vec3,
}

impl Rot6D {
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 6 {
            return Err(Error::arg(format!("rot6d needs 6 values, got {}", v.len())));
        }
        Ok(Self {
            a1: [v[0], v[1], v[2]],
            a2: [v[3], v[4], v[5]],
        })
    }

    /// The first two columns of `r`.
    pub fn from_matrix(r: &Mat3) -> Self {
        Self {
            a1: column(r, 0),
            a2: column(r, 1),
        }
    }
}

/// Gram-Schmidt orthonormalization of the two seeds; third column is their cross product.
pub fn rot6d_to_matrix(v: Rot6D) -> Result<Mat3> {
    let n1 = norm(v.a1);
    if n1.is_nan() || n1 < DEGENERATE_NORM {
        return Err(Error::DegenerateRotation);
    }
    let c1 = scale(v.a1, 1.0 / n1);
    let resid = sub(v.a2, scale(c1, dot(v.a2, c1)));
    let n2 = norm(resid);
    if n2.is_nan() || n2 < DEGENERATE_NORM {
        return Err(Error::DegenerateRotation);
    }
    let c2 = scale(resid, 1.0 / n2);
    let c3 = cross(c1, c2);
    Ok([[c1[0], c2[0], c3[0]], [c1[1], c2[1], c3[1]], [c1[2], c2[2], c3[2]]])
}

/// Rigid camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        for i in 0..3 {
            for j in 0..3 {
                let g = dot(column(&rotation, i), column(&rotation, j));
                let want = if i == j { 1.0 } else { 0.0 };
                if g.is_nan() || (g - want).abs() > ORTHO_TOL {
                    return Err(Error::arg("rotation is not orthonormal"));
                }
            }
        }
        let d = det(&rotation);
        if d.is_nan() || (d - 1.0).abs() > ORTHO_TOL {
            return Err(Error::arg("rotation determinant is not +1"));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite translation"));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn from_rot6d(v: Rot6D, translation: Vec3) -> Result<Self> {
        Self::new(rot6d_to_matrix(v)?, translation)
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.translation
    }
}

/// Per-pixel unit ray directions and moments `m = o x d`, both `H x W x 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct PluckerRayMap {
    pub height: usize,
    pub width: usize,
    pub directions: Vec<Vec3>,
    pub moments: Vec<Vec3>,
}

impl PluckerRayMap {
    /// Packs the map as an `H x W x 6` feature grid (direction then moment).
    pub fn to_feature_map(&self) -> PatchFeatureMap {
        let data = self
            .directions
            .iter()
            .zip(&self.moments)
            .flat_map(|(d, m)| d.iter().chain(m).map(|&v| v as f32).collect::<Vec<_>>())
            .collect();
        PatchFeatureMap::new(self.height, self.width, 6, data).expect("sizes agree")
    }
}

pub fn plucker_ray_map(k: &Intrinsics, pose: &Pose, height: usize, width: usize) -> PluckerRayMap {
    let o = pose.center();
    let mut directions = Vec::with_capacity(height * width);
    let mut moments = Vec::with_capacity(height * width);
    for v in 0..height {
        for u in 0..width {
            let cam = [(u as f64 + 0.5 - k.cx) / k.fx, (v as f64 + 0.5 - k.cy) / k.fy, 1.0];
            let world = mat_vec(&pose.rotation, cam);
            let d = scale(world, 1.0 / norm(world));
            directions.push(d);
            moments.push(cross(o, d));
        }
    }
    PluckerRayMap {
        height,
        width,
        directions,
        moments,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub start_index: usize,
    /// Inclusive.
    pub end_index: usize,
    pub path_length: f64,
}

/// Greedy split of a camera path into segments whose accumulated step length
/// reaches `tau`. The last, possibly shorter, segment is always emitted.
pub fn segment_trajectory(centers: &[Vec3], tau: f64) -> Result<Vec<TrajectorySegment>> {
    if centers.is_empty() {
        return Err(Error::arg("segment_trajectory needs at least one center"));
    }
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::arg(format!("translation threshold must be positive, got {tau}")));
    }
    // accumulated floating-point steps land a few ulps short of exact multiples
    let reach = tau * (1.0 - 1e-9);
    let mut out = Vec::new();
    let mut start = 0;
    let mut length = 0.0;
    for i in 1..centers.len() {
        if i == start {
            continue;
        }
        length += norm(sub(centers[i], centers[i - 1]));
        if length >= reach {
            out.push(TrajectorySegment {
                start_index: start,
                end_index: i,
                path_length: length,
            });
            start = i + 1;
            length = 0.0;
        }
    }
    if start < centers.len() {
        out.push(TrajectorySegment {
            start_index: start,
            end_index: centers.len() - 1,
            path_length: length,
        });
    }
    Ok(out)
}

/// Per-frame camera in the JSON camera file: either `rot6d` or row-major `R`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraFrame {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rot6d: Option<Vec<f64>>,
    #[serde(default, rename = "R", skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    pub t: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraFile {
    pub intrinsics: Intrinsics,
    pub frames: Vec<CameraFrame>,
}

impl CameraFrame {
    pub fn pose(&self) -> Result<Pose> {
        match (&self.rot6d, &self.r) {
            (Some(v), None) => Pose::from_rot6d(Rot6D::from_slice(v)?, self.t),
            (None, Some(r)) => {
                if r.len() != 9 {
                    return Err(Error::arg(format!("R needs 9 values, got {}", r.len())));
                }
                Pose::new([[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]], self.t)
            }
            _ => Err(Error::arg("each frame needs exactly one of rot6d or R")),
        }
    }
}

impl CameraFile {
    pub fn load(path: &Path) -> Result<Self> {
        let file: CameraFile = crate::io::read_json(path)?;
        file.intrinsics.validate()?;
        Ok(file)
    }

    pub fn poses(&self) -> Result<Vec<Pose>> {
        self.frames.iter().map(CameraFrame::pose).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &Mat3, b: &Mat3, tol: f64) -> bool {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .all(|(x, y)| (x - y).abs() <= tol)
    }

    const I3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    #[test]
    fn rot6d_examples() {
        let r = rot6d_to_matrix(Rot6D {
            a1: [1.0, 0.0, 0.0],
            a2: [0.0, 1.0, 0.0],
        })
        .unwrap();
        assert!(close(&r, &I3, 1e-15));
        let r = rot6d_to_matrix(Rot6D {
            a1: [2.0, 0.0, 0.0],
            a2: [0.0, 3.0, 0.0],
        })
        .unwrap();
        assert!(close(&r, &I3, 1e-15));
        let r = rot6d_to_matrix(Rot6D {
            a1: [0.0, 1.0, 0.0],
            a2: [1.0, 0.0, 0.0],
        })
        .unwrap();
        assert!(close(&r, &[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]], 1e-15));
        assert!((det(&r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rot6d_degenerate() {
        let par = Rot6D {
            a1: [1.0, 0.0, 0.0],
            a2: [2.0, 0.0, 0.0],
        };
        assert!(matches!(rot6d_to_matrix(par), Err(Error::DegenerateRotation)));
        let zero = Rot6D {
            a1: [0.0; 3],
            a2: [0.0, 1.0, 0.0],
        };
        assert!(matches!(rot6d_to_matrix(zero), Err(Error::DegenerateRotation)));
    }

    #[test]
    fn pose_rejects_reflection() {
        let flip = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(Pose::new(flip, [0.0; 3]).is_err());
        assert!(Pose::new([[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [0.0; 3]).is_err());
    }

    #[test]
    fn principal_ray_examples() {
        let k = Intrinsics::new(50.0, 50.0, 2.5, 1.5).unwrap();
        // pixel (u=2, v=1) has center (2.5, 1.5) = principal point
        let map = plucker_ray_map(&k, &Pose::identity(), 3, 5);
        let i = 5 + 2;
        assert_eq!(map.directions[i], [0.0, 0.0, 1.0]);
        assert_eq!(map.moments[i], [0.0, 0.0, 0.0]);

        let shifted = Pose::new(I3, [1.0, 0.0, 0.0]).unwrap();
        let map = plucker_ray_map(&k, &shifted, 3, 5);
        assert_eq!(map.directions[i], [0.0, 0.0, 1.0]);
        assert_eq!(map.moments[i], [0.0, -1.0, 0.0]);
    }

    #[test]
    fn segmentation_examples() {
        assert_eq!(
            segment_trajectory(&[[1.0, 2.0, 3.0]; 6], 0.5).unwrap(),
            vec![TrajectorySegment {
                start_index: 0,
                end_index: 5,
                path_length: 0.0
            }]
        );
        let line: Vec<Vec3> = (0..21).map(|i| [0.1 * i as f64, 0.0, 0.0]).collect();
        let segs = segment_trajectory(&line, 1.0).unwrap();
        let spans: Vec<_> = segs.iter().map(|s| (s.start_index, s.end_index)).collect();
        assert_eq!(spans, vec![(0, 10), (11, 20)]);
        assert!((segs[0].path_length - 1.0).abs() < 1e-9);
        let one = segment_trajectory(&[[0.0; 3]], 1.0).unwrap();
        assert_eq!((one[0].start_index, one[0].end_index), (0, 0));
        assert!(segment_trajectory(&[], 1.0).is_err());
        assert!(segment_trajectory(&line, 0.0).is_err());
    }

    #[test]
    fn camera_json_accepts_both_rotation_forms() {
        let text = r#"{"intrinsics":{"fx":10,"fy":10,"cx":4,"cy":4},
            "frames":[{"rot6d":[1,0,0,0,1,0],"t":[0,0,0]},
                      {"R":[0,1,0,1,0,0,0,0,-1],"t":[1,2,3]}]}"#;
        let file: CameraFile = serde_json::from_str(text).unwrap();
        let poses = file.poses().unwrap();
        assert_eq!(poses[0], Pose::identity());
        assert_eq!(poses[1].center(), [1.0, 2.0, 3.0]);
        let bad: CameraFile =
            serde_json::from_str(r#"{"intrinsics":{"fx":1,"fy":1,"cx":0,"cy":0},"frames":[{"t":[0,0,0]}]}"#).unwrap();
        assert!(bad.poses().is_err());
    }

    fn seeds() -> impl Strategy<Value = Rot6D> {
        (proptest::array::uniform6(-1.0f64..1.0)).prop_filter_map("degenerate", |v| {
            let s = Rot6D::from_slice(&v).unwrap();
            let c1 = norm(s.a1);
            let r = norm(cross(s.a1, s.a2));
            (c1 > 0.1 && r > 0.05).then_some(s)
        })
    }

    proptest! {
        #[test]
        fn rot6d_roundtrip(s in seeds()) {
            let r = rot6d_to_matrix(s).unwrap();
            prop_assert!((det(&r) - 1.0).abs() < 1e-9);
            let back = rot6d_to_matrix(Rot6D::from_matrix(&r)).unwrap();
            prop_assert!(close(&back, &r, 1e-12));
        }

        #[test]
        fn plucker_translation_equivariance(s in seeds(), t in proptest::array::uniform3(-3.0f64..3.0)) {
            let k = Intrinsics::new(20.0, 22.0, 4.0, 3.0).unwrap();
            let base = Pose::from_rot6d(s, [0.5, -0.5, 1.0]).unwrap();
            let moved = Pose::new(*base.rotation(), [0.5 + t[0], -0.5 + t[1], 1.0 + t[2]]).unwrap();
            let a = plucker_ray_map(&k, &base, 6, 8);
            let b = plucker_ray_map(&k, &moved, 6, 8);
            for i in 0..48 {
                prop_assert_eq!(a.directions[i], b.directions[i]);
                let expect = cross(t, a.directions[i]);
                for (c, e) in expect.iter().enumerate() {
                    prop_assert!((b.moments[i][c] - a.moments[i][c] - e).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn segments_tile_the_path(steps in proptest::collection::vec(0.0f64..0.5, 0..60), tau in 0.1f64..2.0) {
            let mut centers = vec![[0.0; 3]];
            for s in &steps {
                let last = *centers.last().unwrap();
                centers.push([last[0] + s, last[1], last[2]]);
            }
            let segs = segment_trajectory(&centers, tau).unwrap();
            prop_assert_eq!(segs[0].start_index, 0);
            prop_assert_eq!(segs.last().unwrap().end_index, centers.len() - 1);
            for pair in segs.windows(2) {
                prop_assert_eq!(pair[1].start_index, pair[0].end_index + 1);
                prop_assert!(pair[0].path_length >= tau * (1.0 - 1e-9));
            }
            for s in &segs {
                prop_assert!(s.start_index <= s.end_index);
            }
        }
    }
}
