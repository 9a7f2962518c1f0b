//! Binary mask over an image grid plus the geometry helpers the region
//! pipeline needs (bounding box, centroid, IoU, convex-hull solidity).

use ndarray::Array2;

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub w: u32,
    pub h: u32,
    bits: Vec<bool>,
}

/// Half-open pixel box: `x0 <= x < x1`, `y0 <= y < y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn is_valid_in(&self, w: u32, h: u32) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= w && self.y1 <= h
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

impl Mask {
    pub fn new(w: u32, h: u32) -> Mask {
        Mask {
            w,
            h,
            bits: vec![false; (w * h) as usize],
        }
    }

    pub fn from_indices(w: u32, h: u32, indices: &[usize]) -> Mask {
        let mut m = Mask::new(w, h);
        for &i in indices {
            m.bits[i] = true;
        }
        m
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.w + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[(y * self.w + x) as usize] = v;
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|b| **b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
    }

    /// Tight bounding box, `None` for an empty mask.
    pub fn bbox(&self) -> Option<PixelBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for i in self.indices() {
            let (x, y) = (i as u32 % self.w, i as u32 / self.w);
            any = true;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
        }
        any.then_some(PixelBox { x0, y0, x1, y1 })
    }

    /// Mean pixel coordinates (x, y) of the set pixels.
    pub fn centroid(&self) -> (f64, f64) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for i in self.indices() {
            sx += (i as u32 % self.w) as f64;
            sy += (i as u32 / self.w) as f64;
            n += 1.0;
        }
        if n == 0.0 {
            (0.0, 0.0)
        } else {
            (sx / n, sy / n)
        }
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        debug_assert_eq!((self.w, self.h), (other.w, other.h));
        let mut inter = 0u64;
        let mut union = 0u64;
        for (a, b) in self.bits.iter().zip(&other.bits) {
            if *a && *b {
                inter += 1;
            }
            if *a || *b {
                union += 1;
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn intersects_box(&self, b: &PixelBox) -> bool {
        self.indices().any(|i| {
            let (x, y) = (i as u32 % self.w, i as u32 / self.w);
            b.contains(x, y)
        })
    }

    /// Ratio of pixel area to convex-hull area (pixel squares included), in
    /// (0, 1]. Degenerate hulls (points, lines) count as fully solid.
    pub fn solidity(&self) -> f64 {
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for i in self.indices() {
            let (x, y) = ((i as u32 % self.w) as f64, (i as u32 / self.w) as f64);
            pts.push((x, y));
            pts.push((x + 1.0, y));
            pts.push((x, y + 1.0));
            pts.push((x + 1.0, y + 1.0));
        }
        if pts.is_empty() {
            return 0.0;
        }
        let hull_area = convex_hull_area(&mut pts);
        let area = self.area() as f64;
        if hull_area <= f64::EPSILON {
            1.0
        } else {
            (area / hull_area).min(1.0)
        }
    }

    pub fn to_array(&self) -> Array2<bool> {
        Array2::from_shape_fn((self.h as usize, self.w as usize), |(y, x)| {
            self.get(x as u32, y as u32)
        })
    }
}

/// Shoelace area of the convex hull (Andrew's monotone chain).
fn convex_hull_area(pts: &mut Vec<(f64, f64)>) -> f64 {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev() {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    let mut area = 0.0;
    for i in 0..hull.len() {
        let (x0, y0) = hull[i];
        let (x1, y1) = hull[(i + 1) % hull.len()];
        area += x0 * y1 - x1 * y0;
    }
    area.abs() / 2.0
}

/// 4-connected components of pixels satisfying `same(a, b)` on a key grid.
/// Components are returned in scan-order of their first pixel.
pub fn connected_components<K: PartialEq>(w: u32, h: u32, keys: &[K]) -> Vec<Vec<usize>> {
    assert_eq!(keys.len(), (w * h) as usize);
    let mut visited = vec![false; keys.len()];
    let mut components = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    for start in 0..keys.len() {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (x, y) = (i as u32 % w, i as u32 / w);
            let mut push = |nx: u32, ny: u32| {
                let j = (ny * w + nx) as usize;
                if !visited[j] && keys[j] == keys[i] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                push(x - 1, y);
            }
            if x + 1 < w {
                push(x + 1, y);
            }
            if y > 0 {
                push(x, y - 1);
            }
            if y + 1 < h {
                push(x, y + 1);
            }
        }
        components.push(comp);
    }
    components
}
