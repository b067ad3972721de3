use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A simple polygon in the model frame, centred on its area centroid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub vertices: Vec<[f64; 2]>,
}

impl ShapeSpec {
    /// Even-odd point-in-polygon test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let v = &self.vertices;
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let ([xi, yi], [xj, yj]) = (v[i], v[j]);
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    /// Distance from a point to the polygon boundary.
    pub fn boundary_distance(&self, x: f64, y: f64) -> f64 {
        let v = &self.vertices;
        let mut best = f64::INFINITY;
        for i in 0..v.len() {
            let [ax, ay] = v[i];
            let [bx, by] = v[(i + 1) % v.len()];
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (((x - ax) * dx + (y - ay) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            best = best.min((x - ax - t * dx).hypot(y - ay - t * dy));
        }
        best
    }

    /// Inside the polygon or within `delta` of it.
    pub fn contains_dilated(&self, x: f64, y: f64, delta: f64) -> bool {
        self.contains(x, y) || self.boundary_distance(x, y) <= delta
    }

    /// Largest vertex distance from the origin.
    pub fn radius(&self) -> f64 {
        self.vertices
            .iter()
            .map(|[x, y]| x.hypot(*y))
            .fold(0.0, f64::max)
    }

    /// Largest distance between two vertices.
    pub fn diameter(&self) -> f64 {
        let v = &self.vertices;
        let mut d: f64 = 0.0;
        for a in v {
            for b in v {
                d = d.max((a[0] - b[0]).hypot(a[1] - b[1]));
            }
        }
        d
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }

    /// Area of the polygon's intersection over union with itself rotated
    /// by `theta` about the origin, estimated on a grid of spacing `step`.
    pub fn rotation_iou(&self, theta: f64, step: f64) -> f64 {
        let r = self.radius();
        let n = (2.0 * r / step).ceil() as usize + 1;
        let (s, c) = theta.sin_cos();
        let (mut inter, mut union) = (0usize, 0usize);
        for i in 0..n {
            for j in 0..n {
                let x = -r + (j as f64 + 0.5) * step;
                let y = -r + (i as f64 + 0.5) * step;
                let a = self.contains(x, y);
                // inverse rotation maps the point into the rotated copy's frame
                let b = self.contains(c * x + s * y, -s * x + c * y);
                inter += (a && b) as usize;
                union += (a || b) as usize;
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

fn signed_area(v: &[[f64; 2]]) -> f64 {
    let mut a = 0.0;
    for i in 0..v.len() {
        let [x0, y0] = v[i];
        let [x1, y1] = v[(i + 1) % v.len()];
        a += x0 * y1 - x1 * y0;
    }
    a / 2.0
}

fn centroid(v: &[[f64; 2]]) -> [f64; 2] {
    let a = signed_area(v);
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..v.len() {
        let [x0, y0] = v[i];
        let [x1, y1] = v[(i + 1) % v.len()];
        let cross = x0 * y1 - x1 * y0;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    [cx / (6.0 * a), cy / (6.0 * a)]
}

type Cell = (i32, i32);

const STEPS: [Cell; 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

fn connected(cells: &BTreeSet<Cell>) -> bool {
    let Some(&start) = cells.iter().next() else {
        return true;
    };
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some((x, y)) = stack.pop() {
        for (dx, dy) in STEPS {
            let n = (x + dx, y + dy);
            if cells.contains(&n) && seen.insert(n) {
                stack.push(n);
            }
        }
    }
    seen.len() == cells.len()
}

/// Random polyomino of `n` cells: grow `n + 1` cells, then drop one corner
/// cell of the bounding box whose removal keeps the shape connected.
pub fn random_polyomino(n: usize, rng: &mut impl Rng) -> BTreeSet<Cell> {
    let mut cells = BTreeSet::from([(0, 0)]);
    while cells.len() < n + 1 {
        let list: Vec<Cell> = cells.iter().copied().collect();
        let (x, y) = list[rng.gen_range(0..list.len())];
        let (dx, dy) = STEPS[rng.gen_range(0..4)];
        cells.insert((x + dx, y + dy));
    }
    let (xmin, xmax) = (cells.iter().map(|c| c.0).min().unwrap(), cells.iter().map(|c| c.0).max().unwrap());
    let (ymin, ymax) = (cells.iter().map(|c| c.1).min().unwrap(), cells.iter().map(|c| c.1).max().unwrap());
    let mut corners: Vec<Cell> = cells
        .iter()
        .copied()
        .filter(|&(x, y)| (x == xmin || x == xmax) && (y == ymin || y == ymax))
        .collect();
    corners.shuffle(rng);
    for c in corners {
        let mut rest = cells.clone();
        rest.remove(&c);
        if connected(&rest) {
            return rest;
        }
    }
    // no removable corner: drop the last cell (in sorted order) that keeps the shape connected
    let mut rest = cells.clone();
    for c in cells.iter().rev() {
        rest.remove(c);
        if connected(&rest) {
            return rest;
        }
        rest.insert(*c);
    }
    cells
}

/// Outline of a polyomino as a simple polygon, or `None` if its boundary is
/// not a single simple loop (holes or corner-touching cells).
pub fn trace_outline(cells: &BTreeSet<Cell>) -> Option<Vec<[f64; 2]>> {
    let mut edges: BTreeSet<(Cell, Cell)> = BTreeSet::new();
    for &(x, y) in cells {
        let quad = [(x, y), (x + 1, y), (x + 1, y + 1), (x, y + 1)];
        for i in 0..4 {
            let (a, b) = (quad[i], quad[(i + 1) % 4]);
            if !edges.remove(&(b, a)) {
                edges.insert((a, b));
            }
        }
    }
    let mut next: BTreeMap<Cell, Cell> = BTreeMap::new();
    for &(a, b) in &edges {
        if next.insert(a, b).is_some() {
            return None;
        }
    }
    let start = *next.keys().next()?;
    let mut loop_pts = vec![start];
    let mut cur = next[&start];
    while cur != start {
        loop_pts.push(cur);
        cur = *next.get(&cur)?;
        if loop_pts.len() > edges.len() {
            return None;
        }
    }
    if loop_pts.len() != edges.len() {
        return None;
    }
    // drop collinear vertices
    let n = loop_pts.len();
    let pts: Vec<[f64; 2]> = (0..n)
        .filter(|&i| {
            let (p, c, q) = (loop_pts[(i + n - 1) % n], loop_pts[i], loop_pts[(i + 1) % n]);
            (c.0 - p.0) * (q.1 - c.1) - (c.1 - p.1) * (q.0 - c.0) != 0
        })
        .map(|i| [loop_pts[i].0 as f64, loop_pts[i].1 as f64])
        .collect();
    Some(pts)
}

/// Centre a polygon on its centroid and scale it to the given diameter.
pub fn normalize_shape(vertices: &[[f64; 2]], diameter: f64) -> ShapeSpec {
    let [cx, cy] = centroid(vertices);
    let centred: Vec<[f64; 2]> = vertices.iter().map(|[x, y]| [x - cx, y - cy]).collect();
    let d = ShapeSpec { vertices: centred.clone() }.diameter();
    let s = diameter / d;
    ShapeSpec {
        vertices: centred.iter().map(|[x, y]| [x * s, y * s]).collect(),
    }
}
