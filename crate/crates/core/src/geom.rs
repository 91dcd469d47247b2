//! Domain types: rectangles, poses, layouts, the workspace and scenario records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Smallest generated object side, meters.
pub const MIN_OBJECT_SIZE: f64 = 0.01;
/// Largest generated object side, meters.
pub const MAX_OBJECT_SIZE: f64 = 0.05;
/// Side of the square workspace, meters.
pub const WORKSPACE_SIZE: f64 = 0.30;
/// Maximum number of objects in a scenario.
pub const MAX_OBJECTS: usize = 10;
/// Geometric tolerance for overlap and containment checks.
pub const GEOM_TOL: f64 = 1e-9;

/// Extents of a rectangular object. `width` runs along x, `length` along y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec<T> {
    pub width: T,
    pub length: T,
}

impl<T: Real> ObjectSpec<T> {
    pub fn new(width: T, length: T) -> Result<Self> {
        if !(width.is_finite() && length.is_finite()) || width <= T::zero() || length <= T::zero()
        {
            return Err(Error::InvalidObject(format!(
                "width {width} and length {length} must be finite and positive"
            )));
        }
        Ok(Self { width, length })
    }

    pub fn area(&self) -> T {
        self.width * self.length
    }

    /// Long side over short side, always `>= 1`.
    pub fn aspect_ratio(&self) -> T {
        self.width.max(self.length) / self.width.min(self.length)
    }

    /// True when both sides fall inside the generation range.
    pub fn in_generation_range(&self) -> bool {
        let lo = T::lit(MIN_OBJECT_SIZE) - T::lit(GEOM_TOL);
        let hi = T::lit(MAX_OBJECT_SIZE) + T::lit(GEOM_TOL);
        self.width >= lo && self.width <= hi && self.length >= lo && self.length <= hi
    }

    pub fn cast<U: Real>(&self) -> ObjectSpec<U> {
        ObjectSpec {
            width: U::lit(self.width.as_f64()),
            length: U::lit(self.length.as_f64()),
        }
    }
}

/// Planar pose: center position and heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D<T> {
    pub x: T,
    pub y: T,
    pub yaw: T,
}

impl<T: Real> Pose2D<T> {
    pub fn new(x: T, y: T, yaw: T) -> Self {
        Self { x, y, yaw }
    }

    pub fn at(x: T, y: T) -> Self {
        Self::new(x, y, T::zero())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }
}

/// Maps an angle into `(-pi/2, pi/2]`, the canonical range for a rectangle's heading.
pub fn normalize_rect_yaw<T: Real>(yaw: T) -> T {
    let pi = T::PI();
    let half = T::FRAC_PI_2();
    let mut a = yaw % pi;
    if a > half {
        a -= pi;
    } else if a <= -half {
        a += pi;
    }
    a
}

/// Absolute angular difference modulo pi, in `[0, pi/2]`.
pub fn yaw_distance_mod_pi<T: Real>(a: T, b: T) -> T {
    normalize_rect_yaw(a - b).abs()
}

/// An object and where it sits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placed<T> {
    pub spec: ObjectSpec<T>,
    pub pose: Pose2D<T>,
}

impl<T: Real> Placed<T> {
    pub fn new(spec: ObjectSpec<T>, pose: Pose2D<T>) -> Self {
        Self { spec, pose }
    }

    pub fn rect(&self) -> Rect<T> {
        Rect::from_placed(self)
    }
}

/// Oriented rectangle used for all intersection tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect<T> {
    pub center: [T; 2],
    pub half: [T; 2],
    pub yaw: T,
}

/// Result of testing two rectangles against each other.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact<T> {
    pub overlap: bool,
    /// Minimum distance between the boundaries when disjoint, zero otherwise.
    pub clearance: T,
}

impl<T: Real> Rect<T> {
    pub fn from_placed(p: &Placed<T>) -> Self {
        let two = T::lit(2.0);
        Self {
            center: [p.pose.x, p.pose.y],
            half: [p.spec.width / two, p.spec.length / two],
            yaw: p.pose.yaw,
        }
    }

    pub fn axis_aligned(center: [T; 2], spec: &ObjectSpec<T>) -> Self {
        Self::from_placed(&Placed::new(*spec, Pose2D::at(center[0], center[1])))
    }

    fn axes(&self) -> [[T; 2]; 2] {
        let (s, c) = self.yaw.sin_cos();
        [[c, s], [-s, c]]
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [[T; 2]; 4] {
        let [u, v] = self.axes();
        let [hx, hy] = self.half;
        let [cx, cy] = self.center;
        let corner = |a: T, b: T| [cx + u[0] * a + v[0] * b, cy + u[1] * a + v[1] * b];
        [corner(-hx, -hy), corner(hx, -hy), corner(hx, hy), corner(-hx, hy)]
    }

    /// Axis-aligned bounding box `[xmin, ymin, xmax, ymax]`.
    pub fn bounds(&self) -> [T; 4] {
        let c = self.corners();
        let mut b = [c[0][0], c[0][1], c[0][0], c[0][1]];
        for p in &c[1..] {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        b
    }

    pub fn contains_point(&self, p: [T; 2]) -> bool {
        let [u, v] = self.axes();
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let a = d[0] * u[0] + d[1] * u[1];
        let b = d[0] * v[0] + d[1] * v[1];
        a.abs() < self.half[0] && b.abs() < self.half[1]
    }

    /// Separating-axis test. Shapes whose interpenetration along every axis
    /// exceeds `tol` overlap; touching rectangles do not.
    pub fn contact(&self, other: &Rect<T>, tol: T) -> Contact<T> {
        let ca = self.corners();
        let cb = other.corners();
        let mut overlap = true;
        for axis in self.axes().into_iter().chain(other.axes()) {
            let (a0, a1) = project(&ca, axis);
            let (b0, b1) = project(&cb, axis);
            let pen = a1.min(b1) - a0.max(b0);
            if pen <= tol {
                overlap = false;
                break;
            }
        }
        if overlap {
            return Contact {
                overlap,
                clearance: T::zero(),
            };
        }
        Contact {
            overlap,
            clearance: polygon_distance(&ca, &cb),
        }
    }

    pub fn overlaps(&self, other: &Rect<T>) -> bool {
        self.contact(other, T::lit(GEOM_TOL)).overlap
    }
}

fn project<T: Real>(pts: &[[T; 2]; 4], axis: [T; 2]) -> (T, T) {
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for p in pts {
        let d = p[0] * axis[0] + p[1] * axis[1];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

fn point_segment_distance<T: Real>(p: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > T::zero() {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    let d = [ap[0] - ab[0] * t, ap[1] - ab[1] * t];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

/// Distance between two disjoint convex quads.
fn polygon_distance<T: Real>(a: &[[T; 2]; 4], b: &[[T; 2]; 4]) -> T {
    let mut best = T::infinity();
    for (p, q) in [(a, b), (b, a)] {
        for &v in p.iter() {
            for i in 0..4 {
                best = best.min(point_segment_distance(v, q[i], q[(i + 1) % 4]));
            }
        }
    }
    best
}

/// Rectangular table area with its corner at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace<T> {
    pub width: T,
    pub height: T,
}

impl<T: Real> Default for Workspace<T> {
    fn default() -> Self {
        Self {
            width: T::lit(WORKSPACE_SIZE),
            height: T::lit(WORKSPACE_SIZE),
        }
    }
}

impl<T: Real> Workspace<T> {
    pub fn contains(&self, rect: &Rect<T>) -> bool {
        let tol = T::lit(GEOM_TOL);
        let [x0, y0, x1, y1] = rect.bounds();
        x0 >= -tol && y0 >= -tol && x1 <= self.width + tol && y1 <= self.height + tol
    }
}

/// Ordered placements. Both ground truth and predictions use this type.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Layout<T> {
    pub items: Vec<Placed<T>>,
}

impl<T: Real> Layout<T> {
    pub fn new(items: Vec<Placed<T>>) -> Self {
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn specs(&self) -> Vec<ObjectSpec<T>> {
        self.items.iter().map(|p| p.spec).collect()
    }

    pub fn centers(&self) -> Vec<[T; 2]> {
        self.items.iter().map(|p| [p.pose.x, p.pose.y]).collect()
    }

    /// Overlapping index pairs `(i, j)` with `i < j`.
    pub fn overlap_pairs(&self) -> Vec<(usize, usize)> {
        let rects: Vec<_> = self.items.iter().map(Placed::rect).collect();
        let mut out = Vec::new();
        for i in 0..rects.len() {
            for j in i + 1..rects.len() {
                if rects[i].overlaps(&rects[j]) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn out_of_bounds(&self, ws: &Workspace<T>) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, p)| !ws.contains(&p.rect()))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self, ws: &Workspace<T>) -> ValidityReport {
        ValidityReport {
            overlaps: self.overlap_pairs(),
            out_of_bounds: self.out_of_bounds(ws),
            ..ValidityReport::default()
        }
    }
}

/// One training pair: ordered objects and their axis-aligned target centers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRecord<T> {
    pub objects: Vec<ObjectSpec<T>>,
    pub targets: Vec<[T; 2]>,
}

impl<T: Real> ScenarioRecord<T> {
    pub fn new(objects: Vec<ObjectSpec<T>>, targets: Vec<[T; 2]>) -> Self {
        Self { objects, targets }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Target layout, yaw zero everywhere. Extra objects or targets are dropped.
    pub fn target_layout(&self) -> Layout<T> {
        Layout::new(
            self.objects
                .iter()
                .zip(&self.targets)
                .map(|(s, t)| Placed::new(*s, Pose2D::at(t[0], t[1])))
                .collect(),
        )
    }

    pub fn from_layout(layout: &Layout<T>) -> Self {
        Self {
            objects: layout.specs(),
            targets: layout.centers(),
        }
    }

    /// Keeps only the first `n` objects and targets.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            objects: self.objects[..n.min(self.objects.len())].to_vec(),
            targets: self.targets[..n.min(self.targets.len())].to_vec(),
        }
    }
}

/// Everything wrong with a scenario. Empty means valid.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidityReport {
    pub length_mismatch: Option<(usize, usize)>,
    pub invalid_objects: Vec<usize>,
    pub overlaps: Vec<(usize, usize)>,
    pub out_of_bounds: Vec<usize>,
}

impl ValidityReport {
    pub fn is_ok(&self) -> bool {
        self.length_mismatch.is_none()
            && self.invalid_objects.is_empty()
            && self.overlaps.is_empty()
            && self.out_of_bounds.is_empty()
    }
}

impl std::fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        let mut parts = Vec::new();
        if let Some((a, b)) = self.length_mismatch {
            parts.push(format!("{a} objects vs {b} targets"));
        }
        if !self.invalid_objects.is_empty() {
            parts.push(format!("invalid objects {:?}", self.invalid_objects));
        }
        if !self.overlaps.is_empty() {
            parts.push(format!("overlapping pairs {:?}", self.overlaps));
        }
        if !self.out_of_bounds.is_empty() {
            parts.push(format!("out of bounds {:?}", self.out_of_bounds));
        }
        write!(f, "{}", parts.join("; "))
    }
}

/// Checks lengths, object sanity, pairwise overlap and workspace containment.
pub fn validate_scenario<T: Real>(record: &ScenarioRecord<T>, ws: &Workspace<T>) -> ValidityReport {
    let mut report = ValidityReport::default();
    if record.objects.len() != record.targets.len() {
        report.length_mismatch = Some((record.objects.len(), record.targets.len()));
    }
    report.invalid_objects = record
        .objects
        .iter()
        .enumerate()
        .filter(|(_, o)| ObjectSpec::new(o.width, o.length).is_err())
        .map(|(i, _)| i)
        .chain(
            record
                .targets
                .iter()
                .enumerate()
                .filter(|(_, t)| !(t[0].is_finite() && t[1].is_finite()))
                .map(|(i, _)| i),
        )
        .collect();
    report.invalid_objects.sort_unstable();
    report.invalid_objects.dedup();
    let layout = record.target_layout();
    report.overlaps = layout.overlap_pairs();
    report.out_of_bounds = layout.out_of_bounds(ws);
    report
}
