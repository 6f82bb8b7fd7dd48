//! Binned-SAH bounding volume hierarchy over triangles.

use crate::math::Vec3;

/// Hits closer than this along the ray are ignored.
pub const RAY_T_MIN: f64 = 1e-9;

const MAX_LEAF_SIZE: usize = 4;
const SAH_BINS: usize = 12;
/// Below this depth splits fall back to the median, bounding tree height.
const MAX_SAH_DEPTH: usize = 40;
const STACK_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb {
        min: Vec3::splat(f64::INFINITY),
        max: Vec3::splat(f64::NEG_INFINITY),
    };

    pub fn grow(&mut self, p: Vec3) {
        self.min = self.min.min_elem(p);
        self.max = self.max.max_elem(p);
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: self.min.min_elem(o.min),
            max: self.max.max_elem(o.max),
        }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        if self.min.x > self.max.x {
            0.0
        } else {
            self.extent().length()
        }
    }

    fn surface_area(&self) -> f64 {
        if self.min.x > self.max.x {
            return 0.0;
        }
        let e = self.extent();
        2.0 * (e.x * e.y + e.y * e.z + e.z * e.x)
    }

    /// Slab test; returns the entry distance if the box is hit within `[0, t_max]`.
    #[inline]
    fn hit(&self, origin: Vec3, inv_dir: Vec3, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for a in 0..3 {
            let lo = (self.min[a] - origin[a]) * inv_dir[a];
            let hi = (self.max[a] - origin[a]) * inv_dir[a];
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            // NaN (0 · inf) leaves the bound untouched.
            if lo > t0 {
                t0 = lo;
            }
            if hi < t1 {
                t1 = hi;
            }
            if t0 > t1 * (1.0 + 4.0 * f64::EPSILON) {
                return None;
            }
        }
        Some(t0)
    }
}

/// Ray–triangle hit: distance and barycentric weights of the three vertices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleHit {
    pub t: f64,
    pub triangle: usize,
    pub barycentric: [f64; 3],
}

/// Möller–Trumbore intersection, two-sided.
#[inline]
pub fn intersect_triangle(
    origin: Vec3,
    dir: Vec3,
    v0: Vec3,
    e1: Vec3,
    e2: Vec3,
) -> Option<(f64, f64, f64)> {
    let p = dir.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - v0;
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    Some((t, u, v))
}

#[derive(Debug, Clone, Copy)]
struct Node {
    bounds: Aabb,
    /// Leaf: first primitive slot. Interior: index of the right child
    /// (the left child is always `self + 1`).
    offset: u32,
    /// Primitive count; zero marks an interior node.
    count: u32,
}

#[derive(Debug, Clone, Copy)]
struct PackedTriangle {
    v0: Vec3,
    e1: Vec3,
    e2: Vec3,
    id: u32,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    prims: Vec<PackedTriangle>,
}

impl Bvh {
    pub fn build(positions: &[Vec3], triangles: &[[u32; 3]]) -> Bvh {
        let mut refs: Vec<(Aabb, Vec3, u32)> = triangles
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut b = Aabb::EMPTY;
                for &k in t {
                    b.grow(positions[k as usize]);
                }
                (b, (b.min + b.max) * 0.5, i as u32)
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * refs.len().max(1));
        if !refs.is_empty() {
            let len = refs.len();
            build_recursive(&mut refs, 0, len, 0, &mut nodes);
        }
        let prims = refs
            .iter()
            .map(|&(_, _, id)| {
                let t = triangles[id as usize];
                let v0 = positions[t[0] as usize];
                PackedTriangle {
                    v0,
                    e1: positions[t[1] as usize] - v0,
                    e2: positions[t[2] as usize] - v0,
                    id,
                }
            })
            .collect();
        Bvh { nodes, prims }
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map(|n| n.bounds).unwrap_or(Aabb::EMPTY)
    }

    /// Nearest hit with `RAY_T_MIN < t < t_max`.
    pub fn closest_hit(&self, origin: Vec3, dir: Vec3, t_max: f64) -> Option<TriangleHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv_dir = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<TriangleHit> = None;
        let mut best_t = t_max;
        let mut stack = [0u32; STACK_SIZE];
        let mut sp = 0usize;
        if self.nodes[0].bounds.hit(origin, inv_dir, best_t).is_none() {
            return None;
        }
        stack[sp] = 0;
        sp += 1;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if node.bounds.hit(origin, inv_dir, best_t).is_none() {
                continue;
            }
            if node.count > 0 {
                let start = node.offset as usize;
                for prim in &self.prims[start..start + node.count as usize] {
                    if let Some((t, u, v)) = intersect_triangle(origin, dir, prim.v0, prim.e1, prim.e2)
                    {
                        let better = t < best_t
                            || (t == best_t && best.is_some_and(|b| prim.id < b.triangle as u32));
                        if t > RAY_T_MIN && better {
                            best_t = t;
                            best = Some(TriangleHit {
                                t,
                                triangle: prim.id as usize,
                                barycentric: [1.0 - u - v, u, v],
                            });
                        }
                    }
                }
            } else {
                let idx = stack_index(node, stack[sp]);
                let left = &self.nodes[idx.0 as usize];
                let right = &self.nodes[idx.1 as usize];
                let tl = left.bounds.hit(origin, inv_dir, best_t);
                let tr = right.bounds.hit(origin, inv_dir, best_t);
                match (tl, tr) {
                    (Some(a), Some(b)) => {
                        // Push the farther child first so the nearer one is popped next.
                        let (near, far) = if a <= b { (idx.0, idx.1) } else { (idx.1, idx.0) };
                        stack[sp] = far;
                        stack[sp + 1] = near;
                        sp += 2;
                    }
                    (Some(_), None) => {
                        stack[sp] = idx.0;
                        sp += 1;
                    }
                    (None, Some(_)) => {
                        stack[sp] = idx.1;
                        sp += 1;
                    }
                    (None, None) => {}
                }
            }
        }
        best
    }

    /// True if any triangle is hit with `RAY_T_MIN < t < t_max`.
    pub fn any_hit(&self, origin: Vec3, dir: Vec3, t_max: f64) -> bool {
        if self.nodes.is_empty() || !(t_max > RAY_T_MIN) {
            return false;
        }
        let inv_dir = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = [0u32; STACK_SIZE];
        let mut sp = 1usize;
        while sp > 0 {
            sp -= 1;
            let node_index = stack[sp];
            let node = &self.nodes[node_index as usize];
            if node.bounds.hit(origin, inv_dir, t_max).is_none() {
                continue;
            }
            if node.count > 0 {
                let start = node.offset as usize;
                for prim in &self.prims[start..start + node.count as usize] {
                    if let Some((t, _, _)) = intersect_triangle(origin, dir, prim.v0, prim.e1, prim.e2) {
                        if t > RAY_T_MIN && t < t_max {
                            return true;
                        }
                    }
                }
            } else {
                let (l, r) = stack_index(node, node_index);
                stack[sp] = r;
                stack[sp + 1] = l;
                sp += 2;
            }
        }
        false
    }
}

#[inline]
fn stack_index(node: &Node, index: u32) -> (u32, u32) {
    (index + 1, node.offset)
}

fn build_recursive(
    refs: &mut [(Aabb, Vec3, u32)],
    start: usize,
    end: usize,
    depth: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let slice = &mut refs[start..end];
    let mut bounds = Aabb::EMPTY;
    let mut centroid_bounds = Aabb::EMPTY;
    for r in slice.iter() {
        bounds = bounds.union(&r.0);
        centroid_bounds.grow(r.1);
    }
    let index = nodes.len() as u32;
    nodes.push(Node {
        bounds,
        offset: start as u32,
        count: (end - start) as u32,
    });
    let n = end - start;
    if n <= MAX_LEAF_SIZE {
        return index;
    }

    let extent = centroid_bounds.extent();
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let lo = centroid_bounds.min[axis];
    let span = extent[axis];

    let mid = if span <= 0.0 || depth >= MAX_SAH_DEPTH {
        slice.sort_by(|a, b| a.1[axis].total_cmp(&b.1[axis]).then(a.2.cmp(&b.2)));
        n / 2
    } else {
        let bin_of = |c: f64| (((c - lo) / span * SAH_BINS as f64) as usize).min(SAH_BINS - 1);
        let mut bin_bounds = [Aabb::EMPTY; SAH_BINS];
        let mut bin_counts = [0usize; SAH_BINS];
        for r in slice.iter() {
            let b = bin_of(r.1[axis]);
            bin_counts[b] += 1;
            bin_bounds[b] = bin_bounds[b].union(&r.0);
        }
        let mut best_cost = f64::INFINITY;
        let mut best_split = SAH_BINS / 2;
        for split in 1..SAH_BINS {
            let (mut lb, mut rb) = (Aabb::EMPTY, Aabb::EMPTY);
            let (mut lc, mut rc) = (0usize, 0usize);
            for b in 0..split {
                lb = lb.union(&bin_bounds[b]);
                lc += bin_counts[b];
            }
            for b in split..SAH_BINS {
                rb = rb.union(&bin_bounds[b]);
                rc += bin_counts[b];
            }
            if lc == 0 || rc == 0 {
                continue;
            }
            let cost = lb.surface_area() * lc as f64 + rb.surface_area() * rc as f64;
            if cost < best_cost {
                best_cost = cost;
                best_split = split;
            }
        }
        let mut left = 0;
        for i in 0..n {
            if bin_of(slice[i].1[axis]) < best_split {
                slice.swap(i, left);
                left += 1;
            }
        }
        if left == 0 || left == n {
            slice.sort_by(|a, b| a.1[axis].total_cmp(&b.1[axis]).then(a.2.cmp(&b.2)));
            n / 2
        } else {
            left
        }
    };

    nodes[index as usize].count = 0;
    build_recursive(refs, start, start + mid, depth + 1, nodes);
    let right = build_recursive(refs, start + mid, end, depth + 1, nodes);
    nodes[index as usize].offset = right;
    index
}
