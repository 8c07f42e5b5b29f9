//! Pinhole cameras orbiting a mesh, pose sampling and the three-camera rig
//! augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mesh::{Mesh, PATCH_SIDE_M};

pub type Vec3 = [f64; 3];

#[inline]
fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
#[inline]
fn add_scaled(a: Vec3, b: Vec3, s: f64) -> Vec3 {
    [a[0] + b[0] * s, a[1] + b[1] * s, a[2] + b[2] * s]
}
#[inline]
fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
#[inline]
fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
#[inline]
fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Square-pixel pinhole intrinsics; `fov_deg` is the vertical field of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fov_deg: f64, width: usize, height: usize) -> Self {
        Self {
            fov_deg,
            width,
            height,
        }
    }

    /// Focal length in pixels.
    pub fn focal_px(&self) -> f64 {
        self.height as f64 / 2.0 / (self.fov_deg.to_radians() / 2.0).tan()
    }

    pub fn half_fov_tan(&self) -> f64 {
        (self.fov_deg.to_radians() / 2.0).tan()
    }
}

/// Camera placed on a sphere around the mesh center, looking at it, then
/// translated in its own image plane by the two offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance: f64,
    pub h_offset: f64,
    pub v_offset: f64,
    pub intrinsics: Intrinsics,
}

pub const NEAR_PLANE: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub struct CameraFrame {
    pub eye: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraFrame {
    /// Pixel coordinates and depth of a world point, `None` behind the camera.
    #[inline]
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let d = sub(p, self.eye);
        let z = dot(d, self.forward);
        if z <= NEAR_PLANE {
            return None;
        }
        let x = dot(d, self.right);
        let y = dot(d, self.up);
        Some((self.cx + self.focal * x / z, self.cy - self.focal * y / z, z))
    }
}

impl CameraPose {
    /// Fronto-parallel pose at `distance`.
    pub fn frontal(distance: f64, intrinsics: Intrinsics) -> Self {
        Self {
            azimuth_deg: 0.0,
            elevation_deg: 0.0,
            distance,
            h_offset: 0.0,
            v_offset: 0.0,
            intrinsics,
        }
    }

    pub fn frame(&self) -> CameraFrame {
        let (sa, ca) = self.azimuth_deg.to_radians().sin_cos();
        let (se, ce) = self.elevation_deg.to_radians().sin_cos();
        let eye0 = [self.distance * ce * sa, self.distance * se, self.distance * ce * ca];
        let forward = normalize(sub([0.0; 3], eye0));
        let right = normalize(cross(forward, [0.0, 1.0, 0.0]));
        let up = cross(right, forward);
        let eye = add_scaled(add_scaled(eye0, right, self.h_offset), up, self.v_offset);
        CameraFrame {
            eye,
            right,
            up,
            forward,
            focal: self.intrinsics.focal_px(),
            cx: self.intrinsics.width as f64 / 2.0,
            cy: self.intrinsics.height as f64 / 2.0,
        }
    }

    /// Copy translated along the camera's horizontal axis.
    pub fn shifted(&self, dx: f64) -> Self {
        Self {
            h_offset: self.h_offset + dx,
            ..*self
        }
    }
}

/// Sampling intervals for training poses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRanges {
    pub azimuth_deg: (f64, f64),
    pub elevation_deg: (f64, f64),
    pub distance: (f64, f64),
    pub h_offset: (f64, f64),
    pub v_offset: (f64, f64),
}

impl PoseRanges {
    /// Table ranges with camera distances chosen so a patch of
    /// `PATCH_SIDE_M` spans between 40 and 180 rows of a 608-row image,
    /// i.e. the same apparent size range as the 2D resize baseline.
    pub fn standard(intrinsics: &Intrinsics) -> Self {
        let fraction_to_distance = |frac: f64| PATCH_SIDE_M / (2.0 * intrinsics.half_fov_tan() * frac);
        Self {
            azimuth_deg: (-35.0, 35.0),
            elevation_deg: (-20.0, 20.0),
            distance: (fraction_to_distance(180.0 / 608.0), fraction_to_distance(40.0 / 608.0)),
            h_offset: (-0.25, 0.25),
            v_offset: (-0.25, 0.25),
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.azimuth_deg, self.elevation_deg, self.distance, self.h_offset, self.v_offset]
            .iter()
            .all(|(lo, hi)| lo <= hi && lo.is_finite() && hi.is_finite())
            && self.distance.0 > 0.0
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Independent uniform draw of every pose parameter.
pub fn sample_pose(ranges: &PoseRanges, intrinsics: Intrinsics, rng: &mut impl Rng) -> CameraPose {
    CameraPose {
        azimuth_deg: uniform(rng, ranges.azimuth_deg),
        elevation_deg: uniform(rng, ranges.elevation_deg),
        distance: uniform(rng, ranges.distance),
        h_offset: uniform(rng, ranges.h_offset),
        v_offset: uniform(rng, ranges.v_offset),
        intrinsics,
    }
}

/// Default upper bound of the rig half-spacing for a pose.
pub fn default_max_gamma(pose: &CameraPose) -> f64 {
    0.5 * pose.distance * pose.intrinsics.half_fov_tan()
}

/// Left, center and right camera of one training scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiCamPoses {
    pub left: CameraPose,
    pub center: CameraPose,
    pub right: CameraPose,
    /// Spacing actually used.
    pub gamma: f64,
    /// Whether the requested spacing had to be reduced.
    pub clamped: bool,
}

impl MultiCamPoses {
    pub fn as_array(&self) -> [CameraPose; 3] {
        [self.left, self.center, self.right]
    }
}

/// Whether every patch-region vertex projects inside the image.
pub fn patch_in_frame(mesh: &Mesh, pose: &CameraPose) -> bool {
    let frame = pose.frame();
    let (w, h) = (pose.intrinsics.width as f64, pose.intrinsics.height as f64);
    mesh.patch_vertices().all(|p| match frame.project(p) {
        Some((x, y, _)) => (0.0..=w).contains(&x) && (0.0..=h).contains(&y),
        None => false,
    })
}

/// Places the side cameras at `-gamma` and `+gamma` along the rig axis,
/// keeping the center camera's orientation. If the patch would leave a
/// side camera's view, `gamma` is reduced to the largest feasible value.
pub fn multicam_poses(center: &CameraPose, gamma: f64, mesh: &Mesh) -> MultiCamPoses {
    let gamma = gamma.max(0.0);
    let fits = |g: f64| patch_in_frame(mesh, &center.shifted(-g)) && patch_in_frame(mesh, &center.shifted(g));
    let used = if fits(gamma) {
        gamma
    } else {
        let (mut lo, mut hi) = (0.0, gamma);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if fits(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    MultiCamPoses {
        left: center.shifted(-used),
        center: *center,
        right: center.shifted(used),
        gamma: used,
        clamped: used < gamma,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renderer::mesh::{make_mesh, MeshKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn intr() -> Intrinsics {
        Intrinsics::new(60.0, 64, 64)
    }

    #[test]
    fn degenerate_ranges_fix_the_pose() {
        let r = PoseRanges {
            azimuth_deg: (5.0, 5.0),
            elevation_deg: (1.0, 1.0),
            distance: (2.0, 2.0),
            h_offset: (0.0, 0.0),
            v_offset: (0.1, 0.1),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = sample_pose(&r, intr(), &mut rng);
        let b = sample_pose(&r, intr(), &mut rng);
        assert_eq!(a, b);
        assert_eq!(a.azimuth_deg, 5.0);
    }

    #[test]
    fn azimuth_samples_within_range() {
        let r = PoseRanges::standard(&intr());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let az: Vec<f64> = (0..10_000).map(|_| sample_pose(&r, intr(), &mut rng).azimuth_deg).collect();
        let lo = az.iter().cloned().fold(f64::MAX, f64::min);
        let hi = az.iter().cloned().fold(f64::MIN, f64::max);
        assert!(lo >= -35.0 && hi <= 35.0);
        assert!(lo < -34.0 && hi > 34.0);
    }

    #[test]
    fn same_seed_same_pose() {
        let r = PoseRanges::standard(&intr());
        let a = sample_pose(&r, intr(), &mut ChaCha8Rng::seed_from_u64(4));
        let b = sample_pose(&r, intr(), &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }

    #[test]
    fn frontal_camera_projects_origin_to_center() {
        let f = CameraPose::frontal(2.0, intr()).frame();
        let (x, y, z) = f.project([0.0, 0.0, 0.0]).unwrap();
        assert!((x - 32.0).abs() < 1e-12 && (y - 32.0).abs() < 1e-12 && (z - 2.0).abs() < 1e-12);
    }

    #[test]
    fn standard_distances_give_forty_to_one_eighty_rows() {
        let i = Intrinsics::new(60.0, 608, 608);
        let r = PoseRanges::standard(&i);
        let rows = |d: f64| i.focal_px() * PATCH_SIDE_M / d;
        assert!((rows(r.distance.0) - 180.0).abs() < 1e-9);
        assert!((rows(r.distance.1) - 40.0).abs() < 1e-9);
    }

    #[test]
    fn zero_gamma_gives_identical_poses() {
        let mesh = make_mesh(MeshKind::Billboard);
        let c = CameraPose::frontal(2.5, intr());
        let m = multicam_poses(&c, 0.0, &mesh);
        assert_eq!(m.left, m.center);
        assert_eq!(m.right, m.center);
        assert!(!m.clamped);
    }

    #[test]
    fn gamma_offsets_are_symmetric() {
        let mesh = make_mesh(MeshKind::Billboard);
        let c = CameraPose::frontal(3.0, intr());
        let m = multicam_poses(&c, 0.35, &mesh);
        assert!(!m.clamped);
        assert_eq!([m.left.h_offset, m.center.h_offset, m.right.h_offset], [-0.35, 0.0, 0.35]);
    }

    #[test]
    fn oversized_gamma_is_clamped_into_view() {
        let mesh = make_mesh(MeshKind::Billboard);
        let c = CameraPose::frontal(1.5, intr());
        let m = multicam_poses(&c, 5.0, &mesh);
        assert!(m.clamped && m.gamma < 5.0 && m.gamma > 0.0);
        assert!(patch_in_frame(&mesh, &m.left) && patch_in_frame(&mesh, &m.right));
    }
}
