//! Integer-grid geometry: wire-frame generation, line rasterization and the
//! endpoint distances used by the terminal reward.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("no valid wire-frame found after {attempts} attempts")]
    GenerationExhausted { attempts: usize },
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("no undetected edges to match against")]
    NoCandidates,
    #[error("edge index {0} out of range")]
    EdgeIndex(usize),
}

/// A pixel position. Canvas membership is checked by consumers.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub struct Point {
    pub x: i32,
    pub y: i32,
}

impl Point {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    pub fn euclidean(self, other: Point) -> f64 {
        let dx = f64::from(self.x - other.x);
        let dy = f64::from(self.y - other.y);
        dx.hypot(dy)
    }

    pub fn chebyshev(self, other: Point) -> i32 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub const fn new(a: Point, b: Point) -> Self {
        Self { a, b }
    }

    /// Endpoints in lexicographic order.
    pub fn canonical(self) -> Self {
        if self.b < self.a {
            Self::new(self.b, self.a)
        } else {
            self
        }
    }

    pub fn translate(self, by: Point) -> Self {
        Self::new(self.a + by, self.b + by)
    }

    pub fn chebyshev_len(&self) -> i32 {
        self.a.chebyshev(self.b)
    }

    pub fn pixels(&self) -> Vec<Point> {
        rasterize_segment(*self)
    }
}

/// Bresenham rasterization of `s`.
///
/// The segment is canonicalized first, so `rasterize_segment(a, b)` and
/// `rasterize_segment(b, a)` produce the same pixels in the same order.
pub fn rasterize_segment(s: Segment) -> Vec<Point> {
    let Segment { a, b } = s.canonical();
    let dx = (b.x - a.x).abs();
    let dy = -(b.y - a.y).abs();
    let sx = if a.x < b.x { 1 } else { -1 };
    let sy = if a.y < b.y { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (a.x, a.y);
    let mut out = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        out.push(Point::new(x, y));
        if x == b.x && y == b.y {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Target object: a connected set of segments on a square canvas.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireFrame {
    edges: Vec<Segment>,
    vertices: Vec<Point>,
    canvas: i32,
}

impl WireFrame {
    /// Builds a frame from explicit edges; vertices are the distinct endpoints
    /// in first-seen order. Invariants are not checked here, see [`WireFrame::validate`].
    pub fn from_edges(edges: Vec<Segment>, canvas: i32) -> Self {
        let mut vertices: Vec<Point> = Vec::new();
        for e in &edges {
            for p in [e.a, e.b] {
                if !vertices.contains(&p) {
                    vertices.push(p);
                }
            }
        }
        Self {
            edges,
            vertices,
            canvas,
        }
    }

    pub fn edges(&self) -> &[Segment] {
        &self.edges
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn canvas(&self) -> i32 {
        self.canvas
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Checks every structural invariant; returns a description of the first violation.
    pub fn validate(&self, min_edge_len: i32) -> Result<(), String> {
        if self.edges.is_empty() {
            return Err("frame has no edges".into());
        }
        let inside = |p: Point| (0..self.canvas).contains(&p.x) && (0..self.canvas).contains(&p.y);
        let mut pixel_sets: Vec<BTreeSet<Point>> = Vec::new();
        for (i, e) in self.edges.iter().enumerate() {
            if !inside(e.a) || !inside(e.b) {
                return Err(format!("edge {i} leaves the canvas"));
            }
            if e.chebyshev_len() < min_edge_len {
                return Err(format!("edge {i} shorter than {min_edge_len}"));
            }
            let px: BTreeSet<Point> = rasterize_segment(*e).into_iter().collect();
            if pixel_sets.contains(&px) {
                return Err(format!("edge {i} duplicates another edge's pixels"));
            }
            pixel_sets.push(px);
        }
        // union-find over vertex indices
        let idx = |p: Point| self.vertices.iter().position(|&v| v == p);
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for e in &self.edges {
            let (Some(ia), Some(ib)) = (idx(e.a), idx(e.b)) else {
                return Err("edge endpoint missing from vertex list".into());
            };
            let (ra, rb) = (find(&mut parent, ia), find(&mut parent, ib));
            parent[ra] = rb;
        }
        let root = find(&mut parent, 0);
        if (0..self.vertices.len()).any(|i| find(&mut parent, i) != root) {
            return Err("frame is not connected".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub min_edge_len: i32,
    pub max_edge_len: i32,
    pub max_attempts: usize,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            min_edge_len: 4,
            max_edge_len: 20,
            max_attempts: 10_000,
        }
    }
}

/// Grows a random tree of `n_edges` edges with default generator parameters.
pub fn generate_wireframe(
    seed: u64,
    n_edges: usize,
    canvas: i32,
) -> Result<WireFrame, GeometryError> {
    generate_wireframe_with(seed, n_edges, canvas, &GeneratorParams::default())
}

/// Grows a random tree: a uniform start vertex, then each new edge joins a
/// random existing vertex to a fresh vertex at Chebyshev distance within
/// `[min_edge_len, max_edge_len]`. Candidates that leave the canvas, hit an
/// existing vertex or repeat an existing pixel set are rejected.
pub fn generate_wireframe_with(
    seed: u64,
    n_edges: usize,
    canvas: i32,
    params: &GeneratorParams,
) -> Result<WireFrame, GeometryError> {
    if n_edges == 0 {
        return Err(GeometryError::InvalidParams(
            "n_edges must be at least 1".into(),
        ));
    }
    if canvas < 8 {
        return Err(GeometryError::InvalidParams(format!(
            "canvas {canvas} smaller than 8"
        )));
    }
    if params.min_edge_len < 1 || params.max_edge_len < params.min_edge_len {
        return Err(GeometryError::InvalidParams(format!(
            "edge length range [{}, {}] is empty",
            params.min_edge_len, params.max_edge_len
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_len = params.max_edge_len.min(canvas - 1);
    let mut attempts = 0usize;

    'restart: loop {
        let start = Point::new(rng.random_range(0..canvas), rng.random_range(0..canvas));
        let mut vertices = vec![start];
        let mut edges: Vec<Segment> = Vec::with_capacity(n_edges);
        let mut pixel_sets: Vec<BTreeSet<Point>> = Vec::with_capacity(n_edges);
        let mut stalled = 0usize;

        while edges.len() < n_edges {
            attempts += 1;
            if attempts > params.max_attempts {
                return Err(GeometryError::GenerationExhausted {
                    attempts: params.max_attempts,
                });
            }
            // a partial tree can paint itself into a corner; start over
            stalled += 1;
            if stalled > 500 {
                continue 'restart;
            }
            let from = vertices[rng.random_range(0..vertices.len())];
            let dx = rng.random_range(-max_len..=max_len);
            let dy = rng.random_range(-max_len..=max_len);
            let len = dx.abs().max(dy.abs());
            if len < params.min_edge_len {
                continue;
            }
            let to = from.offset(dx, dy);
            if !(0..canvas).contains(&to.x) || !(0..canvas).contains(&to.y) {
                continue;
            }
            if vertices.contains(&to) {
                continue;
            }
            let seg = Segment::new(from, to);
            let px: BTreeSet<Point> = rasterize_segment(seg).into_iter().collect();
            if pixel_sets.contains(&px) {
                continue;
            }
            vertices.push(to);
            edges.push(seg);
            pixel_sets.push(px);
            stalled = 0;
        }
        return Ok(WireFrame {
            edges,
            vertices,
            canvas,
        });
    }
}

/// Distance between the reconstruction line `p1`-`p2` and its best-matching
/// undetected edge, plus that edge's index.
///
/// For each edge the endpoint closest to `p1` is paired with `p1` and the
/// other endpoint with `p2`. When `p1` is equidistant from both endpoints the
/// pairing with the smaller total is used. Ties between edges go to the lowest index.
pub fn matched_edge_distance(
    p1: Point,
    p2: Point,
    frame: &WireFrame,
    undetected: &BTreeSet<usize>,
) -> Result<(f64, usize), GeometryError> {
    let mut best: Option<(f64, usize)> = None;
    for &i in undetected {
        let e = frame.edges.get(i).ok_or(GeometryError::EdgeIndex(i))?;
        let d = paired_endpoint_distance(p1, p2, e);
        match best {
            Some((bd, _)) if bd <= d => {}
            _ => best = Some((d, i)),
        }
    }
    best.ok_or(GeometryError::NoCandidates)
}

fn paired_endpoint_distance(p1: Point, p2: Point, e: &Segment) -> f64 {
    let (da, db) = (p1.euclidean(e.a), p1.euclidean(e.b));
    let via_a = da + p2.euclidean(e.b);
    let via_b = db + p2.euclidean(e.a);
    if da < db {
        via_a
    } else if db < da {
        via_b
    } else {
        via_a.min(via_b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: Vec<Point>) -> BTreeSet<Point> {
        v.into_iter().collect()
    }

    // Rounds the exact line at every column (or row, for steep lines).
    fn dda_oracle(a: Point, b: Point) -> BTreeSet<Point> {
        let mut out = BTreeSet::new();
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        if dx == 0 && dy == 0 {
            out.insert(a);
            return out;
        }
        if dx.abs() >= dy.abs() {
            for x in a.x.min(b.x)..=a.x.max(b.x) {
                let t = f64::from(x - a.x) / f64::from(dx);
                let y = f64::from(a.y) + t * f64::from(dy);
                out.insert(Point::new(x, y.round() as i32));
            }
        } else {
            for y in a.y.min(b.y)..=a.y.max(b.y) {
                let t = f64::from(y - a.y) / f64::from(dy);
                let x = f64::from(a.x) + t * f64::from(dx);
                out.insert(Point::new(x.round() as i32, y));
            }
        }
        out
    }

    #[test]
    fn axis_aligned_line() {
        let px = rasterize_segment(Segment::new(Point::new(0, 0), Point::new(3, 0)));
        assert_eq!(
            px,
            vec![
                Point::new(0, 0),
                Point::new(1, 0),
                Point::new(2, 0),
                Point::new(3, 0)
            ]
        );
    }

    #[test]
    fn diagonal_matches_dda_oracle() {
        let (a, b) = (Point::new(0, 0), Point::new(2, 2));
        let expected = dda_oracle(a, b);
        assert_eq!(
            expected,
            set(vec![Point::new(0, 0), Point::new(1, 1), Point::new(2, 2)])
        );
        assert_eq!(set(rasterize_segment(Segment::new(a, b))), expected);
    }

    #[test]
    fn degenerate_point() {
        let p = Point::new(5, 5);
        assert_eq!(rasterize_segment(Segment::new(p, p)), vec![p]);
    }

    #[test]
    fn rasterization_is_8_connected_with_endpoints() {
        let s = Segment::new(Point::new(3, 17), Point::new(25, 2));
        let px = rasterize_segment(s);
        assert!(px.contains(&s.a) && px.contains(&s.b));
        for w in px.windows(2) {
            assert_eq!(w[0].chebyshev(w[1]), 1);
        }
        assert_eq!(px.len() as i32, s.chebyshev_len() + 1);
    }

    #[test]
    fn single_edge_frame() {
        let f = generate_wireframe(42, 1, 30).unwrap();
        assert_eq!(f.len(), 1);
        assert!(f.validate(4).is_ok());
        let e = f.edges()[0];
        for p in [e.a, e.b] {
            assert!((0..30).contains(&p.x) && (0..30).contains(&p.y));
        }
        assert!(e.chebyshev_len() >= 4);
    }

    #[test]
    fn three_edge_tree() {
        let f = generate_wireframe(7, 3, 30).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f.vertices().len(), 4);
        assert!(f.validate(4).is_ok());
        assert_eq!(f, generate_wireframe(7, 3, 30).unwrap());
    }

    #[test]
    fn generation_errors() {
        assert!(matches!(
            generate_wireframe(1, 0, 30),
            Err(GeometryError::InvalidParams(_))
        ));
        assert!(matches!(
            generate_wireframe(1, 1, 7),
            Err(GeometryError::InvalidParams(_))
        ));
        let tight = GeneratorParams {
            min_edge_len: 7,
            max_edge_len: 7,
            max_attempts: 200,
        };
        // far more edges than an 8x8 canvas can host at length 7
        assert!(matches!(
            generate_wireframe_with(1, 40, 8, &tight),
            Err(GeometryError::GenerationExhausted { .. })
        ));
    }

    #[test]
    fn distance_examples() {
        let f = WireFrame::from_edges(vec![Segment::new(Point::new(0, 0), Point::new(10, 0))], 30);
        let all: BTreeSet<usize> = [0].into();
        assert_eq!(
            matched_edge_distance(Point::new(0, 0), Point::new(10, 3), &f, &all).unwrap(),
            (3.0, 0)
        );
        assert_eq!(
            matched_edge_distance(Point::new(10, 0), Point::new(0, 0), &f, &all).unwrap(),
            (0.0, 0)
        );
        assert_eq!(
            matched_edge_distance(Point::new(0, 0), Point::new(1, 1), &f, &BTreeSet::new()),
            Err(GeometryError::NoCandidates)
        );
    }

    #[test]
    fn distance_selects_exact_match() {
        let a = Segment::new(Point::new(2, 2), Point::new(2, 20));
        let b = Segment::new(Point::new(2, 2), Point::new(15, 9));
        let f = WireFrame::from_edges(vec![a, b], 30);
        let all: BTreeSet<usize> = [0, 1].into();
        assert_eq!(matched_edge_distance(b.b, b.a, &f, &all).unwrap(), (0.0, 1));
        let only_a: BTreeSet<usize> = [0].into();
        let (d, i) = matched_edge_distance(b.b, b.a, &f, &only_a).unwrap();
        assert_eq!(i, 0);
        assert!(d > 0.0);
    }
}
