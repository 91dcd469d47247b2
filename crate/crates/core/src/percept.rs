//! Pose and size of a rectangular object from its four corner keypoints.
//!
//! Reported poses are canonical: `width` is the longer side and `yaw` is the
//! direction of that side in `(-pi/2, pi/2]`. Squares use the side whose
//! direction falls in `(-pi/4, pi/4]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{normalize_rect_yaw, ObjectSpec, Placed, Pose2D};
use crate::scalar::Real;

/// Largest tolerated relative length mismatch between opposite edges.
pub const RECT_TOLERANCE: f64 = 0.2;
/// Sides within this relative difference are treated as a square.
const SQUARE_TOLERANCE: f64 = 1e-9;

/// Four corner points in any order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointQuad<T> {
    pub points: [[T; 2]; 4],
}

impl<T: Real> KeypointQuad<T> {
    pub fn new(points: [[T; 2]; 4]) -> Self {
        Self { points }
    }
}

fn lex<T: Real>(a: &[T; 2], b: &[T; 2]) -> std::cmp::Ordering {
    a[0].partial_cmp(&b[0])
        .unwrap()
        .then(a[1].partial_cmp(&b[1]).unwrap())
}

/// Counter-clockwise order around the centroid, independent of input order.
fn convex_order<T: Real>(q: &KeypointQuad<T>) -> ([[T; 2]; 4], [T; 2]) {
    let mut pts = q.points;
    pts.sort_by(lex);
    let four = T::lit(4.0);
    let c = [
        pts.iter().map(|p| p[0]).sum::<T>() / four,
        pts.iter().map(|p| p[1]).sum::<T>() / four,
    ];
    pts.sort_by(|a, b| {
        let ta = (a[1] - c[1]).atan2(a[0] - c[0]);
        let tb = (b[1] - c[1]).atan2(b[0] - c[0]);
        ta.partial_cmp(&tb).unwrap().then(lex(a, b))
    });
    (pts, c)
}

fn sub<T: Real>(a: [T; 2], b: [T; 2]) -> [T; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm<T: Real>(v: [T; 2]) -> T {
    v[0].hypot(v[1])
}

/// Averaged unit direction of two anti-parallel edges, pointing along `a`.
fn mean_direction<T: Real>(a: [T; 2], b: [T; 2]) -> [T; 2] {
    let (na, nb) = (norm(a), norm(b));
    let d = [a[0] / na - b[0] / nb, a[1] / na - b[1] / nb];
    let n = norm(d);
    [d[0] / n, d[1] / n]
}

/// Center, canonical yaw and dimensions of the rectangle through `q`.
pub fn pose_from_keypoints<T: Real>(q: &KeypointQuad<T>) -> Result<(Pose2D<T>, ObjectSpec<T>)> {
    if q.points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite keypoint".into()));
    }
    let (p, c) = convex_order(q);
    let e = [sub(p[1], p[0]), sub(p[2], p[1]), sub(p[3], p[2]), sub(p[0], p[3])];
    let len = e.map(norm);
    let extent = len.iter().copied().fold(T::zero(), T::max);
    let twice_area = (0..4).fold(T::zero(), |acc, i| {
        let (a, b) = (p[i], p[(i + 1) % 4]);
        acc + a[0] * b[1] - a[1] * b[0]
    });
    if !(extent > T::zero()) || twice_area.abs() <= T::lit(1e-9) * extent * extent || len.iter().any(|&l| l == T::zero()) {
        return Err(Error::Degenerate("keypoints are collinear or coincident".into()));
    }
    let ratio = |a: T, b: T| ((a - b).abs() / a.max(b)).as_f64();
    let mismatch = ratio(len[0], len[2]).max(ratio(len[1], len[3]));
    if mismatch > RECT_TOLERANCE {
        return Err(Error::NotRectangular { ratio: mismatch });
    }
    let two = T::lit(2.0);
    let side_a = (len[0] + len[2]) / two;
    let side_b = (len[1] + len[3]) / two;
    let dir_a = mean_direction(e[0], e[2]);
    let dir_b = mean_direction(e[1], e[3]);
    let yaw_a = normalize_rect_yaw(dir_a[1].atan2(dir_a[0]));
    let yaw_b = normalize_rect_yaw(dir_b[1].atan2(dir_b[0]));
    let quarter = T::FRAC_PI_4();
    let take_a = if ratio(side_a, side_b) <= SQUARE_TOLERANCE {
        yaw_a > -quarter && yaw_a <= quarter
    } else {
        side_a > side_b
    };
    let (width, length, yaw) = if take_a {
        (side_a, side_b, yaw_a)
    } else {
        (side_b, side_a, yaw_b)
    };
    Ok((Pose2D::new(c[0], c[1], yaw), ObjectSpec::new(width, length)?))
}

/// The same rectangle in the canonical form reported by `pose_from_keypoints`.
pub fn canonical_pose<T: Real>(pose: &Pose2D<T>, spec: &ObjectSpec<T>) -> (Pose2D<T>, ObjectSpec<T>) {
    let half = T::FRAC_PI_2();
    let swap = spec.length > spec.width
        || (spec.length == spec.width && {
            let y = normalize_rect_yaw(pose.yaw);
            !(y > -T::FRAC_PI_4() && y <= T::FRAC_PI_4())
        });
    if swap {
        (
            Pose2D::new(pose.x, pose.y, normalize_rect_yaw(pose.yaw + half)),
            ObjectSpec {
                width: spec.length,
                length: spec.width,
            },
        )
    } else {
        (Pose2D::new(pose.x, pose.y, normalize_rect_yaw(pose.yaw)), *spec)
    }
}

/// Exact corners of the posed rectangle plus isotropic Gaussian noise.
pub fn keypoints_from_pose<T: Real>(pose: &Pose2D<T>, spec: &ObjectSpec<T>, noise_std: f64, seed: u64) -> Result<KeypointQuad<T>> {
    let mut points = Placed::new(*spec, *pose).rect().corners();
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in points.iter_mut() {
            p[0] += T::lit(normal.sample(&mut rng));
            p[1] += T::lit(normal.sample(&mut rng));
        }
    } else if noise_std < 0.0 || noise_std.is_nan() {
        return Err(Error::Config("noise_std must be >= 0".into()));
    }
    Ok(KeypointQuad { points })
}
