//! Pick-and-place planning from a cluttered layout to a target layout, with
//! sweeps for occupied targets and separation nudges for tight grasps, plus a
//! footprint-level executor to check plans.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{yaw_distance_mod_pi, Contact, Layout, ObjectSpec, Placed, Pose2D, Rect, Workspace, GEOM_TOL};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionKind {
    Move,
    PickPlace,
    Sweep,
    Separate,
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Move => "move",
            Self::PickPlace => "pick_place",
            Self::Sweep => "sweep",
            Self::Separate => "separate",
        })
    }
}

impl FromStr for ActionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "move" => Ok(Self::Move),
            "pick_place" => Ok(Self::PickPlace),
            "sweep" => Ok(Self::Sweep),
            "separate" => Ok(Self::Separate),
            other => Err(Error::Config(format!("unknown action `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action<T> {
    pub kind: ActionKind,
    pub index: usize,
    pub from: Pose2D<T>,
    pub to: Pose2D<T>,
}

impl<T: Real> Action<T> {
    /// `kind, index, sx, sy, syaw, dx, dy, dyaw`
    pub fn to_line(&self) -> String {
        format!(
            "{}, {}, {:?}, {:?}, {:?}, {:?}, {:?}, {:?}",
            self.kind,
            self.index,
            self.from.x.as_f64(),
            self.from.y.as_f64(),
            self.from.yaw.as_f64(),
            self.to.x.as_f64(),
            self.to.y.as_f64(),
            self.to.yaw.as_f64()
        )
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self> {
        let bad = |msg: String| Error::Parse { line: line_no, msg };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 8 {
            return Err(bad(format!("expected 8 fields, found {}", f.len())));
        }
        let kind = f[0].parse::<ActionKind>().map_err(|e| bad(e.to_string()))?;
        let index = f[1].parse::<usize>().map_err(|e| bad(e.to_string()))?;
        let mut v = [T::zero(); 6];
        for (slot, s) in v.iter_mut().zip(&f[2..]) {
            let x: f64 = s.parse().map_err(|_| bad(format!("bad number `{s}`")))?;
            if !x.is_finite() {
                return Err(bad(format!("non-finite number `{s}`")));
            }
            *slot = T::lit(x);
        }
        Ok(Self {
            kind,
            index,
            from: Pose2D::new(v[0], v[1], v[2]),
            to: Pose2D::new(v[3], v[4], v[5]),
        })
    }
}

pub fn plan_to_text<T: Real>(plan: &[Action<T>]) -> String {
    plan.iter().map(|a| a.to_line() + "\n").collect()
}

pub fn plan_from_text<T: Real>(text: &str) -> Result<Vec<Action<T>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Action::parse_line(l, i + 1))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanConfig<T> {
    /// Minimum clearance around an object before it is grasped.
    pub separation_threshold: T,
    /// `[xmin, ymin, xmax, ymax]` region that receives swept objects.
    pub buffer_strip: [T; 4],
    /// Scan step for buffer slots.
    pub buffer_step: T,
    pub clearance_epsilon: T,
    pub workspace: Workspace<T>,
}

impl<T: Real> Default for PlanConfig<T> {
    fn default() -> Self {
        Self {
            separation_threshold: T::lit(0.01),
            buffer_strip: [T::zero(), T::lit(0.20), T::lit(0.30), T::lit(0.30)],
            buffer_step: T::lit(0.002),
            clearance_epsilon: T::lit(1e-6),
            workspace: Workspace::default(),
        }
    }
}

impl<T: Real> PlanConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.separation_threshold > T::zero()) {
            return Err(Error::Config("separation_threshold must be > 0".into()));
        }
        if !(self.buffer_step > T::zero()) {
            return Err(Error::Config("buffer_step must be > 0".into()));
        }
        let [x0, y0, x1, y1] = self.buffer_strip;
        if !(x0 < x1 && y0 < y1) {
            return Err(Error::Config("empty buffer strip".into()));
        }
        Ok(())
    }

    fn in_buffer(&self, r: &Rect<T>) -> bool {
        let tol = T::lit(GEOM_TOL);
        let [x0, y0, x1, y1] = r.bounds();
        let [bx0, by0, bx1, by1] = self.buffer_strip;
        x0 >= bx0 - tol && y0 >= by0 - tol && x1 <= bx1 + tol && y1 <= by1 + tol
    }
}

/// Intersection test between two posed objects, with boundary clearance
/// when they are disjoint.
pub fn obb_overlap<T: Real>(a: (&Pose2D<T>, &ObjectSpec<T>), b: (&Pose2D<T>, &ObjectSpec<T>)) -> Contact<T> {
    let ra = Placed::new(*a.1, *a.0).rect();
    let rb = Placed::new(*b.1, *b.0).rect();
    ra.contact(&rb, T::lit(GEOM_TOL))
}

fn same_pose<T: Real>(a: &Pose2D<T>, b: &Pose2D<T>, tol: T) -> bool {
    (a.x - b.x).abs() <= tol && (a.y - b.y).abs() <= tol && yaw_distance_mod_pi(a.yaw, b.yaw) <= tol
}

struct Planner<'a, T> {
    cfg: &'a PlanConfig<T>,
    specs: Vec<ObjectSpec<T>>,
    poses: Vec<Pose2D<T>>,
    targets: Vec<Pose2D<T>>,
    settled: Vec<bool>,
    swept: Vec<bool>,
    separated: Vec<bool>,
    plan: Vec<Action<T>>,
}

impl<T: Real> Planner<'_, T> {
    fn rect(&self, i: usize, pose: &Pose2D<T>) -> Rect<T> {
        Placed::new(self.specs[i], *pose).rect()
    }

    fn contact(&self, i: usize, pose: &Pose2D<T>, j: usize) -> Contact<T> {
        self.rect(i, pose)
            .contact(&self.rect(j, &self.poses[j]), T::lit(GEOM_TOL))
    }

    fn min_clearance(&self, i: usize, pose: &Pose2D<T>) -> T {
        (0..self.specs.len())
            .filter(|&j| j != i)
            .map(|j| self.contact(i, pose, j).clearance)
            .fold(T::infinity(), T::min)
    }

    /// Free of standing objects, inside the table and, when `avoid_targets`,
    /// off every target but the mover's own.
    fn parkable(&self, i: usize, pose: &Pose2D<T>, margin: T, avoid_targets: bool) -> bool {
        let r = self.rect(i, pose);
        if !self.cfg.workspace.contains(&r) {
            return false;
        }
        for j in 0..self.specs.len() {
            if j == i {
                continue;
            }
            let c = self.contact(i, pose, j);
            if c.overlap || c.clearance < margin {
                return false;
            }
            let t = self.rect(j, &self.targets[j]);
            if avoid_targets && r.contact(&t, T::lit(GEOM_TOL)).overlap {
                return false;
            }
        }
        true
    }

    fn push(&mut self, kind: ActionKind, index: usize, to: Pose2D<T>) {
        self.plan.push(Action {
            kind,
            index,
            from: self.poses[index],
            to,
        });
        self.poses[index] = to;
    }

    /// Best nudge of `mover` by the threshold, directions fanned around
    /// `away`; ranked by resulting clearance, first direction on ties.
    /// Spots off other objects' targets are preferred; landing on one is
    /// allowed as a last resort for an object not yet swept, since that
    /// target gets swept before use.
    fn nudge(&self, mover: usize, away: [T; 2]) -> Option<Pose2D<T>> {
        let d = self.cfg.separation_threshold;
        let base = away[1].atan2(away[0]);
        let quarter = T::FRAC_PI_4();
        for avoid_targets in [true, false] {
            if !avoid_targets && self.swept[mover] {
                break;
            }
            let mut best: Option<(T, Pose2D<T>)> = None;
            for k in [0i32, 1, -1, 2, -2] {
                let a = base + quarter * T::lit(k as f64);
                let p = self.poses[mover];
                let cand = Pose2D::new(p.x + d * a.cos(), p.y + d * a.sin(), p.yaw);
                if !self.parkable(mover, &cand, T::zero(), avoid_targets) {
                    continue;
                }
                let c = self.min_clearance(mover, &cand);
                if best.is_none_or(|(b, _)| c > b) {
                    best = Some((c, cand));
                }
            }
            if best.is_some() {
                return best.map(|(_, p)| p);
            }
        }
        None
    }

    fn separate_before_pick(&mut self, i: usize) {
        let threshold = self.cfg.separation_threshold;
        for j in 0..self.specs.len() {
            if j == i || self.contact(i, &self.poses[i], j).clearance >= threshold {
                continue;
            }
            let (pi, pj) = (self.poses[i], self.poses[j]);
            let away = [pj.x - pi.x, pj.y - pi.y];
            if !self.settled[j] && !self.separated[j] {
                if let Some(to) = self.nudge(j, away) {
                    self.separated[j] = true;
                    self.push(ActionKind::Separate, j, to);
                    continue;
                }
            }
            if !self.separated[i] {
                if let Some(to) = self.nudge(i, [-away[0], -away[1]]) {
                    self.separated[i] = true;
                    self.push(ActionKind::Separate, i, to);
                }
            }
        }
    }

    /// First free buffer slot scanning rows from the far edge, left to right.
    fn buffer_slot(&self, j: usize) -> Option<Pose2D<T>> {
        let two = T::lit(2.0);
        let [bx0, by0, bx1, by1] = self.cfg.buffer_strip;
        let s = self.specs[j];
        let step = self.cfg.buffer_step;
        let margin = self.cfg.separation_threshold + self.cfg.clearance_epsilon;
        let mut top = by1;
        while top - s.length >= by0 - T::lit(GEOM_TOL) {
            let mut left = bx0;
            while left + s.width <= bx1 + T::lit(GEOM_TOL) {
                let cand = Pose2D::at(left + s.width / two, top - s.length / two);
                if self.cfg.in_buffer(&self.rect(j, &cand)) && self.parkable(j, &cand, margin, true) {
                    return Some(cand);
                }
                left += step;
            }
            top -= step;
        }
        None
    }

    fn clear_target(&mut self, i: usize) -> Result<()> {
        let target = self.rect(i, &self.targets[i]);
        for j in 0..self.specs.len() {
            if j == i || !target.overlaps(&self.rect(j, &self.poses[j])) {
                continue;
            }
            if self.settled[j] || self.swept[j] {
                return Err(Error::InvalidTarget(format!(
                    "object {j} cannot be moved off the target of object {i}"
                )));
            }
            let to = self
                .buffer_slot(j)
                .ok_or_else(|| Error::InvalidTarget(format!("no buffer space for object {j}")))?;
            self.swept[j] = true;
            self.push(ActionKind::Sweep, j, to);
        }
        Ok(())
    }
}

/// Actions that turn `current` into the layout with object `i` centered on
/// `targets[i]` at zero yaw. Objects are placed in slot order.
pub fn plan_actions<T: Real>(current: &Layout<T>, targets: &[[T; 2]], cfg: &PlanConfig<T>) -> Result<Vec<Action<T>>> {
    cfg.validate()?;
    let n = current.len();
    if targets.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: targets.len(),
        });
    }
    let goal = Layout::new(
        current
            .items
            .iter()
            .zip(targets)
            .map(|(p, t)| Placed::new(p.spec, Pose2D::at(t[0], t[1])))
            .collect(),
    );
    let report = goal.validate(&cfg.workspace);
    if !report.is_ok() {
        return Err(Error::InvalidTarget(report.to_string()));
    }
    let tol = T::lit(GEOM_TOL);
    let mut p = Planner {
        cfg,
        specs: current.specs(),
        poses: current.items.iter().map(|p| p.pose).collect(),
        targets: goal.items.iter().map(|p| p.pose).collect(),
        settled: vec![false; n],
        swept: vec![false; n],
        separated: vec![false; n],
        plan: Vec::new(),
    };
    for i in 0..n {
        p.settled[i] = same_pose(&p.poses[i], &p.targets[i], tol);
    }
    for i in 0..n {
        if p.settled[i] {
            continue;
        }
        p.separate_before_pick(i);
        p.clear_target(i)?;
        let to = p.targets[i];
        p.push(ActionKind::PickPlace, i, to);
        p.settled[i] = true;
    }
    Ok(p.plan)
}

/// A footprint conflict seen while executing a plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collision {
    pub step: usize,
    pub moved: usize,
    /// The object hit, or `None` when the destination leaves the workspace.
    pub other: Option<usize>,
}

/// Applies `plan` and logs every destination that overlaps a standing object
/// or leaves the workspace.
pub fn simulate_execution<T: Real>(
    current: &Layout<T>,
    plan: &[Action<T>],
    ws: &Workspace<T>,
) -> Result<(Layout<T>, Vec<Collision>)> {
    let mut layout = current.clone();
    let mut log = Vec::new();
    for (step, a) in plan.iter().enumerate() {
        if a.index >= layout.len() {
            return Err(Error::MissingObject {
                action: step,
                index: a.index,
            });
        }
        let dest = Placed::new(layout.items[a.index].spec, a.to).rect();
        if !ws.contains(&dest) {
            log.push(Collision {
                step,
                moved: a.index,
                other: None,
            });
        }
        for (j, other) in layout.items.iter().enumerate() {
            if j != a.index && dest.overlaps(&other.rect()) {
                log.push(Collision {
                    step,
                    moved: a.index,
                    other: Some(j),
                });
            }
        }
        layout.items[a.index].pose = a.to;
    }
    Ok((layout, log))
}

/// Largest per-object deviation (center distance or yaw modulo pi).
pub fn pose_error<T: Real>(layout: &Layout<T>, targets: &[[T; 2]]) -> Result<T> {
    if layout.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: layout.len(),
            right: targets.len(),
        });
    }
    Ok(layout
        .items
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            (p.pose.x - t[0])
                .abs()
                .max((p.pose.y - t[1]).abs())
                .max(yaw_distance_mod_pi(p.pose.yaw, T::zero()))
        })
        .fold(T::zero(), T::max))
}

/// Non-overlapping random poses for `objects` anywhere on the table.
pub fn random_clutter<T: Real>(objects: &[ObjectSpec<T>], ws: &Workspace<T>, seed: u64) -> Result<Layout<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items: Vec<Placed<T>> = Vec::with_capacity(objects.len());
    for (i, o) in objects.iter().enumerate() {
        let mut placed = false;
        for _ in 0..10_000 {
            let pose = Pose2D::new(
                T::lit(rng.random_range(0.0..ws.width.as_f64())),
                T::lit(rng.random_range(0.0..ws.height.as_f64())),
                T::lit(rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2)),
            );
            let cand = Placed::new(*o, pose);
            let r = cand.rect();
            if ws.contains(&r) && items.iter().all(|p| !p.rect().overlaps(&r)) {
                items.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Degenerate(format!("no free pose for object {i}")));
        }
    }
    Ok(Layout::new(items))
}
