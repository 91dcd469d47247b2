//! Scene files: one object per line, either `w l x y yaw` or four corner
//! keypoints `x1 y1 x2 y2 x3 y3 x4 y4`. Numbers may be separated by spaces
//! or commas; blank lines and `#` comments are skipped. A file uses one form
//! throughout.

use knoll::geom::{Layout, ObjectSpec, Placed, Pose2D};
use knoll::percept::{pose_from_keypoints, KeypointQuad};
use knoll::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneMode {
    Pose,
    Keypoints,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub mode: SceneMode,
    pub layout: Layout<f64>,
}

fn numbers(line: &str, line_no: usize) -> Result<Vec<f64>> {
    line.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            let v: f64 = t.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("not a number: `{t}`"),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse {
                    line: line_no,
                    msg: format!("non-finite value `{t}`"),
                })
            }
        })
        .collect()
}

pub fn parse_scene(text: &str) -> Result<Scene> {
    let mut mode = None;
    let mut items = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v = numbers(line, line_no)?;
        let this = match v.len() {
            5 => SceneMode::Pose,
            8 => SceneMode::Keypoints,
            k => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 5 (w l x y yaw) or 8 (keypoints) numbers, found {k}"),
                })
            }
        };
        if *mode.get_or_insert(this) != this {
            return Err(Error::Parse {
                line: line_no,
                msg: "pose and keypoint lines mixed in one scene".into(),
            });
        }
        let placed = match this {
            SceneMode::Pose => {
                let spec = ObjectSpec::new(v[0], v[1]).map_err(|e| Error::Parse {
                    line: line_no,
                    msg: e.to_string(),
                })?;
                Placed::new(spec, Pose2D::new(v[2], v[3], v[4]))
            }
            SceneMode::Keypoints => {
                let q = KeypointQuad::new([[v[0], v[1]], [v[2], v[3]], [v[4], v[5]], [v[6], v[7]]]);
                let (pose, spec) = pose_from_keypoints(&q).map_err(|e| Error::Parse {
                    line: line_no,
                    msg: e.to_string(),
                })?;
                Placed::new(spec, pose)
            }
        };
        items.push(placed);
    }
    match mode {
        Some(mode) => Ok(Scene {
            mode,
            layout: Layout::new(items),
        }),
        None => Err(Error::EmptyLayout),
    }
}

pub fn format_scene(layout: &Layout<f64>) -> String {
    layout
        .items
        .iter()
        .map(|p| format!("{} {} {} {} {}\n", p.spec.width, p.spec.length, p.pose.x, p.pose.y, p.pose.yaw))
        .collect()
}
