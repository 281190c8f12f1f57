//! Plain-text scene files:
//!
//! ```text
//! wireframe v1
//! canvas 30
//! edge x1 y1 x2 y2
//! ```

use thiserror::Error;

use crate::geometry::{Point, Segment, WireFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("scene has no edges")]
    Empty,
}

pub fn write_scene(frame: &WireFrame) -> String {
    let mut out = format!("wireframe v1\ncanvas {}\n", frame.canvas());
    for e in frame.edges() {
        out.push_str(&format!("edge {} {} {} {}\n", e.a.x, e.a.y, e.b.x, e.b.y));
    }
    out
}

pub fn parse_scene(text: &str) -> Result<WireFrame, SceneError> {
    let err = |line: usize, msg: &str| SceneError::Parse {
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    match lines.next() {
        Some((_, "wireframe v1")) => {}
        Some((n, _)) => return Err(err(n, "expected header `wireframe v1`")),
        None => return Err(err(1, "empty file")),
    }
    let canvas = match lines.next() {
        Some((n, l)) => l
            .strip_prefix("canvas ")
            .and_then(|v| v.trim().parse::<i32>().ok())
            .filter(|&c| c > 0)
            .ok_or_else(|| err(n, "expected `canvas <size>`"))?,
        None => return Err(err(2, "missing canvas line")),
    };

    let mut edges = Vec::new();
    for (n, l) in lines {
        if l.is_empty() {
            continue;
        }
        let mut parts = l.split_whitespace();
        if parts.next() != Some("edge") {
            return Err(err(n, "expected `edge x1 y1 x2 y2`"));
        }
        let nums: Vec<i32> = parts
            .map(|p| p.parse::<i32>())
            .collect::<Result<_, _>>()
            .map_err(|_| err(n, "edge coordinates must be integers"))?;
        let [x1, y1, x2, y2] = nums[..] else {
            return Err(err(n, "edge needs exactly four coordinates"));
        };
        edges.push(Segment::new(Point::new(x1, y1), Point::new(x2, y2)));
    }
    if edges.is_empty() {
        return Err(SceneError::Empty);
    }
    Ok(WireFrame::from_edges(edges, canvas))
}
