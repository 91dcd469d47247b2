//! Ground-truth tidy layouts: greedy row packing, a bounding-square annealer
//! over row-structured states, preference orderings, and the JSON-lines
//! dataset format.

use std::io::{BufRead, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{
    validate_scenario, Layout, ObjectSpec, Placed, Pose2D, ScenarioRecord, Workspace, MAX_OBJECTS, MAX_OBJECT_SIZE, MIN_OBJECT_SIZE, WORKSPACE_SIZE,
};
use crate::scalar::Real;

pub const DEFAULT_GAP: f64 = 0.005;
/// Sizes are drawn on this grid so equal-size objects actually occur.
pub const SIZE_QUANTUM: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PackConfig<T> {
    pub gap: T,
    pub max_row_width: T,
    /// Height available for stacked rows.
    pub max_height: T,
}

impl<T: Real> Default for PackConfig<T> {
    fn default() -> Self {
        Self {
            gap: T::lit(DEFAULT_GAP),
            max_row_width: T::lit(WORKSPACE_SIZE),
            max_height: T::lit(WORKSPACE_SIZE),
        }
    }
}

impl<T: Real> PackConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let ws = T::lit(WORKSPACE_SIZE);
        if !(self.gap >= T::zero()) || !self.gap.is_finite() {
            return Err(Error::Config(format!("gap must be >= 0, got {}", self.gap)));
        }
        if !(self.max_row_width > T::zero() && self.max_row_width <= ws) {
            return Err(Error::Config(format!("max_row_width {} outside (0, {ws}]", self.max_row_width)));
        }
        if !(self.max_height > T::zero() && self.max_height <= ws) {
            return Err(Error::Config(format!("max_height {} outside (0, {ws}]", self.max_height)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealConfig {
    pub iterations: usize,
    /// Relative to the initial objective.
    pub initial_temperature: f64,
    pub cooling_rate: f64,
    pub seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            initial_temperature: 0.1,
            cooling_rate: 0.999,
            seed: 0,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(self.cooling_rate > 0.0 && self.cooling_rate < 1.0) {
            return Err(Error::Config(format!("cooling_rate {} outside (0, 1)", self.cooling_rate)));
        }
        if !(self.initial_temperature >= 0.0) || !self.initial_temperature.is_finite() {
            return Err(Error::Config("initial_temperature must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Preference orderings applied to the input sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum OrderingRule {
    #[default]
    AsGiven,
    AreaDescending,
    AreaAscending,
    AspectDescending,
}

impl std::str::FromStr for OrderingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-given" | "none" => Ok(Self::AsGiven),
            "area-desc" | "area-descending" => Ok(Self::AreaDescending),
            "area-asc" | "area-ascending" => Ok(Self::AreaAscending),
            "aspect-desc" | "aspect-ratio-descending" => Ok(Self::AspectDescending),
            other => Err(Error::Config(format!("unknown ordering `{other}`"))),
        }
    }
}

impl std::fmt::Display for OrderingRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::AsGiven => "as-given",
            Self::AreaDescending => "area-desc",
            Self::AreaAscending => "area-asc",
            Self::AspectDescending => "aspect-desc",
        })
    }
}

/// Stable sort by `rule`, ties broken on (width, length, original index).
/// Returns the reordered objects and `perm` with `out[i] = objects[perm[i]]`.
pub fn apply_ordering<T: Real>(objects: &[ObjectSpec<T>], rule: OrderingRule) -> (Vec<ObjectSpec<T>>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..objects.len()).collect();
    if rule != OrderingRule::AsGiven {
        let key = |o: &ObjectSpec<T>| match rule {
            OrderingRule::AreaDescending => -o.area(),
            OrderingRule::AreaAscending => o.area(),
            OrderingRule::AspectDescending => -o.aspect_ratio(),
            OrderingRule::AsGiven => T::zero(),
        };
        perm.sort_by(|&a, &b| {
            let (oa, ob) = (&objects[a], &objects[b]);
            key(oa)
                .partial_cmp(&key(ob))
                .unwrap()
                .then(oa.width.partial_cmp(&ob.width).unwrap())
                .then(oa.length.partial_cmp(&ob.length).unwrap())
                .then(a.cmp(&b))
        });
    }
    (perm.iter().map(|&i| objects[i]).collect(), perm)
}

/// Places objects in rows given explicit row breaks (`breaks[i]` starts a new
/// row at object `i + 1`). Rows are left-aligned at x = 0 and stacked upward
/// from y = 0, each object resting on its row's baseline.
fn place_rows<T: Real>(objects: &[ObjectSpec<T>], breaks: &[bool], gap: T) -> (Vec<[T; 2]>, T, T) {
    let two = T::lit(2.0);
    let mut centers = Vec::with_capacity(objects.len());
    let (mut x, mut y0, mut row_h, mut width) = (T::zero(), T::zero(), T::zero(), T::zero());
    for (i, o) in objects.iter().enumerate() {
        if i > 0 && breaks[i - 1] {
            y0 += row_h + gap;
            x = T::zero();
            row_h = T::zero();
        }
        if x > T::zero() {
            x += gap;
        }
        centers.push([x + o.width / two, y0 + o.length / two]);
        x += o.width;
        width = width.max(x);
        row_h = row_h.max(o.length);
    }
    (centers, width, y0 + row_h)
}

fn to_layout<T: Real>(objects: &[ObjectSpec<T>], centers: &[[T; 2]]) -> Layout<T> {
    Layout::new(
        objects
            .iter()
            .zip(centers)
            .map(|(o, c)| Placed::new(*o, Pose2D::at(c[0], c[1])))
            .collect(),
    )
}

fn check_packable<T: Real>(objects: &[ObjectSpec<T>], cfg: &PackConfig<T>) -> Result<()> {
    cfg.validate()?;
    if objects.is_empty() {
        return Err(Error::EmptyLayout);
    }
    for (index, o) in objects.iter().enumerate() {
        if o.width > cfg.max_row_width || o.length > cfg.max_height {
            return Err(Error::Unpackable {
                index,
                width: o.width.as_f64(),
                max_row_width: cfg.max_row_width.as_f64(),
            });
        }
    }
    Ok(())
}

/// Greedy row breaks: a new row starts when the next object would overflow.
fn greedy_breaks<T: Real>(objects: &[ObjectSpec<T>], cfg: &PackConfig<T>) -> Vec<bool> {
    let mut breaks = vec![false; objects.len().saturating_sub(1)];
    let mut x = T::zero();
    for (i, o) in objects.iter().enumerate() {
        let needed = if x > T::zero() { x + cfg.gap + o.width } else { o.width };
        if i > 0 && needed > cfg.max_row_width + T::lit(1e-12) {
            breaks[i - 1] = true;
            x = o.width;
        } else {
            x = needed;
        }
    }
    breaks
}

/// Deterministic greedy row packing in input order.
pub fn pack_rows<T: Real>(objects: &[ObjectSpec<T>], cfg: &PackConfig<T>) -> Result<Layout<T>> {
    check_packable(objects, cfg)?;
    let breaks = greedy_breaks(objects, cfg);
    let (centers, _, _) = place_rows(objects, &breaks, cfg.gap);
    Ok(to_layout(objects, &centers))
}

/// Returns `(width, height)` of the union bounding box.
pub fn bounding_box<T: Real>(layout: &Layout<T>) -> Result<(T, T)> {
    if layout.is_empty() {
        return Err(Error::EmptyLayout);
    }
    let mut b = [T::infinity(), T::infinity(), T::neg_infinity(), T::neg_infinity()];
    for p in &layout.items {
        let r = p.rect().bounds();
        b[0] = b[0].min(r[0]);
        b[1] = b[1].min(r[1]);
        b[2] = b[2].max(r[2]);
        b[3] = b[3].max(r[3]);
    }
    Ok((b[2] - b[0], b[3] - b[1]))
}

/// `s^2` with `s` the larger side of the union bounding box.
pub fn bounding_square_area<T: Real>(layout: &Layout<T>) -> Result<T> {
    let (w, h) = bounding_box(layout)?;
    let s = w.max(h);
    Ok(s * s)
}

/// Smallest separation between any two axis-aligned footprints
/// (the larger of the x and y gaps); infinite for fewer than two items.
pub fn min_pairwise_gap<T: Real>(layout: &Layout<T>) -> T {
    let two = T::lit(2.0);
    let mut best = T::infinity();
    for (i, a) in layout.items.iter().enumerate() {
        for b in &layout.items[i + 1..] {
            let gx = (a.pose.x - b.pose.x).abs() - (a.spec.width + b.spec.width) / two;
            let gy = (a.pose.y - b.pose.y).abs() - (a.spec.length + b.spec.length) / two;
            best = best.min(gx.max(gy));
        }
    }
    best
}

/// Annealer state: a slot order and where rows break.
#[derive(Debug, Clone, PartialEq, Eq)]
struct RowState {
    order: Vec<usize>,
    breaks: Vec<bool>,
}

/// Primary and secondary objective of a state, `None` when infeasible.
fn score<T: Real>(objects: &[ObjectSpec<T>], s: &RowState, cfg: &PackConfig<T>, buf: &mut Vec<ObjectSpec<T>>) -> Option<(T, T)> {
    buf.clear();
    buf.extend(s.order.iter().map(|&i| objects[i]));
    let (_, w, h) = place_rows(buf, &s.breaks, cfg.gap);
    if w > cfg.max_row_width + T::lit(1e-12) || h > cfg.max_height + T::lit(1e-12) {
        return None;
    }
    let side = w.max(h);
    Some((side * side, w * h))
}

/// Lexicographic improvement on (square area, box area).
fn improves<T: Real>(cand: (T, T), best: (T, T)) -> bool {
    cand.0 < best.0 || (cand.0 == best.0 && cand.1 < best.1)
}

fn propose<R: Rng>(s: &RowState, rng: &mut R) -> RowState {
    let n = s.order.len();
    let mut next = s.clone();
    match rng.random_range(0..4) {
        0 => {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            next.order.swap(a, b);
        }
        1 => {
            let i = rng.random_range(0..n - 1);
            next.breaks[i] = !next.breaks[i];
        }
        2 => {
            let set: Vec<usize> = (0..n - 1).filter(|&i| s.breaks[i]).collect();
            if let Some(&i) = set.get(rng.random_range(0..set.len().max(1))) {
                let j = if rng.random::<bool>() { i + 1 } else { i.wrapping_sub(1) };
                if j < n - 1 && !s.breaks[j] {
                    next.breaks[i] = false;
                    next.breaks[j] = true;
                }
            }
        }
        _ => {
            let from = rng.random_range(0..n);
            let to = rng.random_range(0..n);
            let o = next.order.remove(from);
            next.order.insert(to, o);
        }
    }
    next
}

/// Orders equal-size objects next to each other, keeping first appearances.
pub fn group_equal_sizes<T: Real>(objects: &[ObjectSpec<T>]) -> Vec<usize> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, o) in objects.iter().enumerate() {
        match groups.iter_mut().find(|g| objects[g[0]] == *o) {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups.concat()
}

/// Result of an annealing run.
#[derive(Debug, Clone, PartialEq)]
pub struct Annealed<T> {
    /// Object `i` of the layout is input object `order[i]`, in slot order.
    pub layout: Layout<T>,
    pub order: Vec<usize>,
    pub breaks: Vec<bool>,
    pub area: T,
}

/// Simulated annealing of the bounding-square area over row-structured
/// layouts, starting from `pack_rows` on the size-grouped input. `monitor`
/// sees `(iteration, best area so far)` after every evaluated state.
pub fn optimize_layout_with<T: Real>(
    objects: &[ObjectSpec<T>],
    cfg: &AnnealConfig,
    pack: &PackConfig<T>,
    mut monitor: impl FnMut(usize, T),
) -> Result<Annealed<T>> {
    cfg.validate()?;
    check_packable(objects, pack)?;
    let n = objects.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let order = group_equal_sizes(objects);
    let grouped: Vec<ObjectSpec<T>> = order.iter().map(|&i| objects[i]).collect();
    let mut buf = Vec::with_capacity(n);
    let mut cur = RowState {
        breaks: greedy_breaks(&grouped, pack),
        order,
    };
    let mut cur_score = score(objects, &cur, pack, &mut buf).ok_or_else(|| Error::Unpackable {
        index: 0,
        width: 0.0,
        max_row_width: pack.max_row_width.as_f64(),
    })?;
    let mut best = cur.clone();
    let mut best_score = cur_score;
    monitor(1, best_score.0);
    let scale = cur_score.0.as_f64().max(f64::MIN_POSITIVE);
    let mut temp = cfg.initial_temperature;
    for it in 2..=cfg.iterations {
        if n > 1 {
            let cand = propose(&cur, &mut rng);
            let u: f64 = rng.random();
            if let Some(sc) = score(objects, &cand, pack, &mut buf) {
                let delta = (sc.0.as_f64() - cur_score.0.as_f64()) / scale;
                let accept = delta < 0.0
                    || (delta == 0.0 && sc.1 <= cur_score.1)
                    || (temp > 0.0 && u < (-delta / temp).exp());
                if accept {
                    cur = cand;
                    cur_score = sc;
                    if improves(cur_score, best_score) {
                        best = cur.clone();
                        best_score = cur_score;
                    }
                }
            }
            temp *= cfg.cooling_rate;
        }
        monitor(it, best_score.0);
    }
    let ordered: Vec<ObjectSpec<T>> = best.order.iter().map(|&i| objects[i]).collect();
    let (centers, _, _) = place_rows(&ordered, &best.breaks, pack.gap);
    Ok(Annealed {
        layout: to_layout(&ordered, &centers),
        order: best.order,
        breaks: best.breaks,
        area: best_score.0,
    })
}

/// Annealed layout, objects in slot order.
pub fn optimize_layout<T: Real>(objects: &[ObjectSpec<T>], cfg: &AnnealConfig, pack: &PackConfig<T>) -> Result<Layout<T>> {
    optimize_layout_with(objects, cfg, pack, |_, _| {}).map(|a| a.layout)
}

/// Best row breaks for a fixed order by exhaustive enumeration, ranked by
/// (square area, box area) with the first enumerated set winning exact ties.
pub fn best_row_breaks<T: Real>(objects: &[ObjectSpec<T>], pack: &PackConfig<T>) -> Result<(Layout<T>, T)> {
    check_packable(objects, pack)?;
    let n = objects.len();
    let identity = RowState {
        order: (0..n).collect(),
        breaks: vec![false; n - 1],
    };
    let mut buf = Vec::with_capacity(n);
    let mut best: Option<(Vec<bool>, (T, T))> = None;
    for mask in 0u32..(1u32 << (n - 1)) {
        let s = RowState {
            breaks: (0..n - 1).map(|i| mask >> i & 1 == 1).collect(),
            ..identity.clone()
        };
        if let Some(sc) = score(objects, &s, pack, &mut buf) {
            if best.as_ref().is_none_or(|(_, b)| improves(sc, *b)) {
                best = Some((s.breaks, sc));
            }
        }
    }
    let (breaks, sc) = best.ok_or(Error::Unpackable {
        index: 0,
        width: 0.0,
        max_row_width: pack.max_row_width.as_f64(),
    })?;
    let (centers, _, _) = place_rows(objects, &breaks, pack.gap);
    Ok((to_layout(objects, &centers), sc.0))
}

/// Options for dataset synthesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub n_range: (usize, usize),
    pub anneal: AnnealConfig,
    pub pack: PackConfig<f64>,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_range: (2, MAX_OBJECTS),
            anneal: AnnealConfig::default(),
            pack: PackConfig::default(),
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.n_range;
        if lo < 1 || lo > hi || hi > MAX_OBJECTS {
            return Err(Error::Config(format!("bad n_range {:?}", self.n_range)));
        }
        self.anneal.validate()?;
        self.pack.validate()
    }
}

/// Scenario `index` of the stream seeded by `cfg.seed`.
pub fn generate_scenario(index: u64, cfg: &GenConfig) -> Result<ScenarioRecord<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let n = rng.random_range(cfg.n_range.0..=cfg.n_range.1);
    let lo = (MIN_OBJECT_SIZE / SIZE_QUANTUM).round() as u32;
    let hi = (MAX_OBJECT_SIZE / SIZE_QUANTUM).round() as u32;
    let objects: Vec<ObjectSpec<f64>> = (0..n)
        .map(|_| {
            let w = rng.random_range(lo..=hi) as f64 * SIZE_QUANTUM;
            let l = rng.random_range(lo..=hi) as f64 * SIZE_QUANTUM;
            ObjectSpec::new(w, l)
        })
        .collect::<Result<_>>()?;
    let anneal = AnnealConfig {
        seed: rng.next_u64(),
        ..cfg.anneal
    };
    let annealed = optimize_layout_with(&objects, &anneal, &cfg.pack, |_, _| {})?;
    let ordered = annealed.layout.specs();
    let (layout, _) = best_row_breaks(&ordered, &cfg.pack)?;
    Ok(ScenarioRecord::from_layout(&layout))
}

/// `count` scenarios in index order, generated in parallel.
pub fn generate_dataset(count: usize, cfg: &GenConfig) -> Result<Vec<ScenarioRecord<f64>>> {
    generate_range(0, count, cfg)
}

/// Scenarios `start..start + count` of the stream.
pub fn generate_range(start: u64, count: usize, cfg: &GenConfig) -> Result<Vec<ScenarioRecord<f64>>> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::Config("count must be >= 1".into()));
    }
    (0..count as u64)
        .into_par_iter()
        .map(|i| generate_scenario(start + i, cfg))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    n: usize,
    objects: Vec<[f64; 2]>,
    targets: Vec<[f64; 2]>,
}

/// One JSON line, shortest round-trip decimal for every number.
pub fn encode_record(record: &ScenarioRecord<f64>) -> String {
    let line = RecordLine {
        n: record.len(),
        objects: record.objects.iter().map(|o| [o.width, o.length]).collect(),
        targets: record.targets.clone(),
    };
    serde_json::to_string(&line).expect("plain numbers serialize")
}

/// Parses one line; `line_no` is reported in errors.
pub fn decode_record_at(text: &str, line_no: usize) -> Result<ScenarioRecord<f64>> {
    let err = |msg: String| Error::Parse { line: line_no, msg };
    let raw: RecordLine = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
    if raw.objects.len() != raw.n || raw.targets.len() != raw.n {
        return Err(err(format!(
            "n = {} but {} objects and {} targets",
            raw.n,
            raw.objects.len(),
            raw.targets.len()
        )));
    }
    if raw.targets.iter().flatten().any(|v| !v.is_finite()) {
        return Err(err("non-finite target".into()));
    }
    let objects = raw
        .objects
        .iter()
        .map(|&[w, l]| ObjectSpec::new(w, l))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| err(e.to_string()))?;
    Ok(ScenarioRecord::new(objects, raw.targets))
}

pub fn decode_record(text: &str) -> Result<ScenarioRecord<f64>> {
    decode_record_at(text, 1)
}

pub fn write_dataset<W: Write>(records: &[ScenarioRecord<f64>], w: &mut W) -> Result<()> {
    for r in records {
        writeln!(w, "{}", encode_record(r))?;
    }
    Ok(())
}

/// Reads every non-blank line; errors carry 1-based line numbers.
pub fn read_dataset<R: BufRead>(r: R) -> Result<Vec<ScenarioRecord<f64>>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(decode_record_at(&line, i + 1)?);
    }
    Ok(out)
}

/// How `legalize` arrived at its targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Legalized {
    AsPredicted,
    /// Translated as a whole back inside the workspace.
    Shifted,
    /// Replaced by the best row packing of the objects in their given order.
    Repacked,
}

fn scenario_ok(objects: &[ObjectSpec<f64>], targets: &[[f64; 2]], ws: &Workspace<f64>) -> bool {
    validate_scenario(&ScenarioRecord::new(objects.to_vec(), targets.to_vec()), ws).is_ok()
}

/// Targets for `objects` that pass `validate_scenario`, staying as close to
/// `predicted` as these fallbacks allow.
pub fn legalize(
    objects: &[ObjectSpec<f64>],
    predicted: &[[f64; 2]],
    pack: &PackConfig<f64>,
    ws: &Workspace<f64>,
) -> Result<(Vec<[f64; 2]>, Legalized)> {
    if objects.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: objects.len(),
            right: predicted.len(),
        });
    }
    if objects.is_empty() {
        return Err(Error::EmptyLayout);
    }
    if scenario_ok(objects, predicted, ws) {
        return Ok((predicted.to_vec(), Legalized::AsPredicted));
    }
    if predicted.iter().flatten().all(|v| v.is_finite()) {
        let layout = ScenarioRecord::new(objects.to_vec(), predicted.to_vec()).target_layout();
        let [x0, y0, x1, y1] = layout.items.iter().map(|p| p.rect().bounds()).fold(
            [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
            |a, b| [a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])],
        );
        let shift = |lo: f64, hi: f64, size: f64| {
            if lo < 0.0 {
                -lo
            } else if hi > size {
                size - hi
            } else {
                0.0
            }
        };
        let (dx, dy) = (shift(x0, x1, ws.width), shift(y0, y1, ws.height));
        let moved: Vec<[f64; 2]> = predicted.iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
        if scenario_ok(objects, &moved, ws) {
            return Ok((moved, Legalized::Shifted));
        }
    }
    let (layout, _) = best_row_breaks(objects, pack)?;
    let targets = layout.centers();
    if !scenario_ok(objects, &targets, ws) {
        return Err(Error::InvalidTarget("objects do not fit the workspace".into()));
    }
    Ok((targets, Legalized::Repacked))
}
