//! Exact nearest-neighbor structures: a uniform hash grid for 3D points and
//! a vantage-point tree for high-dimensional descriptor vectors.

use std::collections::HashMap;

use nalgebra::Vector3;

/// Uniform hash grid over 3D points supporting exact nearest-neighbor and
/// radius queries. Ties are broken toward the lower point index so queries
/// are deterministic.
pub struct PointGrid<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    anchor: Vector3<f64>,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
    max_ring: i64,
}

impl<'a> PointGrid<'a> {
    /// `cell` should be on the order of the expected query radius.
    pub fn build(points: &'a [Vector3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell must be positive");
        let anchor = points.iter().fold(
            Vector3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            |acc, p| acc.inf(p),
        );
        let anchor = if points.is_empty() {
            Vector3::zeros()
        } else {
            anchor
        };
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        let mut max_ring = 0i64;
        for (i, p) in points.iter().enumerate() {
            let key = Self::key_of(p, &anchor, cell);
            max_ring = max_ring
                .max(key.0.abs())
                .max(key.1.abs())
                .max(key.2.abs());
            cells.entry(key).or_default().push(i);
        }
        PointGrid {
            points,
            cell,
            anchor,
            cells,
            max_ring: max_ring + 1,
        }
    }

    fn key_of(p: &Vector3<f64>, anchor: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
        (
            ((p.x - anchor.x) / cell).floor() as i64,
            ((p.y - anchor.y) / cell).floor() as i64,
            ((p.z - anchor.z) / cell).floor() as i64,
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Exact nearest neighbor of `q`; `None` only for an empty point set.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        self.nearest_bounded(q, f64::INFINITY)
    }

    /// Exact nearest neighbor within `max_dist` (inclusive), if any.
    pub fn nearest_within(&self, q: &Vector3<f64>, max_dist: f64) -> Option<(usize, f64)> {
        self.nearest_bounded(q, max_dist)
    }

    fn nearest_bounded(&self, q: &Vector3<f64>, max_dist: f64) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let center = Self::key_of(q, &self.anchor, self.cell);
        let mut best: Option<(f64, usize)> = None;
        let ring_cap = if max_dist.is_finite() {
            ((max_dist / self.cell).ceil() as i64 + 1).min(2 * self.max_ring + 2)
        } else {
            2 * self.max_ring + 2
        };
        for ring in 0..=ring_cap {
            // Every cell at Chebyshev ring r is at least (r-1)·cell away.
            if let Some((bd, _)) = best {
                if (ring - 1).max(0) as f64 * self.cell > bd {
                    break;
                }
            }
            self.for_ring_cells(center, ring, |bucket| {
                for &i in bucket {
                    let d = (self.points[i] - q).norm();
                    let better = match best {
                        None => true,
                        Some((bd, bi)) => d < bd || (d == bd && i < bi),
                    };
                    if better {
                        best = Some((d, i));
                    }
                }
            });
        }
        match best {
            Some((d, i)) if d <= max_dist => Some((i, d)),
            _ => None,
        }
    }

    fn for_ring_cells(
        &self,
        center: (i64, i64, i64),
        ring: i64,
        mut visit: impl FnMut(&[usize]),
    ) {
        let (cx, cy, cz) = center;
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                for dz in -ring..=ring {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                        continue;
                    }
                    if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        visit(bucket);
                    }
                }
            }
        }
    }

    /// All points with distance ≤ `radius`, sorted ascending by index.
    pub fn within_radius(&self, q: &Vector3<f64>, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        if self.points.is_empty() {
            return out;
        }
        let lo = Self::key_of(&(q - Vector3::repeat(radius)), &self.anchor, self.cell);
        let hi = Self::key_of(&(q + Vector3::repeat(radius)), &self.anchor, self.cell);
        for kx in lo.0..=hi.0 {
            for ky in lo.1..=hi.1 {
                for kz in lo.2..=hi.2 {
                    if let Some(bucket) = self.cells.get(&(kx, ky, kz)) {
                        for &i in bucket {
                            let d = (self.points[i] - q).norm();
                            if d <= radius {
                                out.push((i, d));
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        out
    }
}

/// Euclidean distance between two equal-length vectors.
pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Linear-scan exact nearest neighbor; ties resolve to the lower index.
pub fn nearest_linear(items: &[Vec<f64>], q: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, item) in items.iter().enumerate() {
        let d = l2_distance(item, q);
        let better = match best {
            None => true,
            Some((bd, _)) => d < bd,
        };
        if better {
            best = Some((d, i));
        }
    }
    best.map(|(d, i)| (i, d))
}

struct VpNode {
    /// Index into the item list (the vantage point).
    item: usize,
    /// Median distance separating inside from outside children.
    threshold: f64,
    inside: Option<usize>,
    outside: Option<usize>,
}

/// Vantage-point tree for exact nearest-neighbor search in arbitrary
/// dimension. Pruning bounds are inclusive so equidistant candidates are
/// always visited, keeping the lower-index tie-break exact.
pub struct VpTree<'a> {
    items: &'a [Vec<f64>],
    nodes: Vec<VpNode>,
    root: Option<usize>,
}

impl<'a> VpTree<'a> {
    pub fn build(items: &'a [Vec<f64>]) -> Self {
        let mut tree = VpTree {
            items,
            nodes: Vec::with_capacity(items.len()),
            root: None,
        };
        let mut order: Vec<usize> = (0..items.len()).collect();
        tree.root = tree.build_recursive(&mut order);
        tree
    }

    fn build_recursive(&mut self, order: &mut [usize]) -> Option<usize> {
        let (first, rest) = order.split_first_mut()?;
        let vantage = *first;
        let mut scored: Vec<(f64, usize)> = rest
            .iter()
            .map(|&i| (l2_distance(&self.items[i], &self.items[vantage]), i))
            .collect();
        scored.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = scored.len() / 2;
        let threshold = if scored.is_empty() {
            0.0
        } else {
            scored[mid.min(scored.len() - 1)].0
        };
        let mut inside: Vec<usize> = scored[..mid].iter().map(|&(_, i)| i).collect();
        let mut outside: Vec<usize> = scored[mid..].iter().map(|&(_, i)| i).collect();
        let node_id = self.nodes.len();
        self.nodes.push(VpNode {
            item: vantage,
            threshold,
            inside: None,
            outside: None,
        });
        let inside_id = self.build_recursive(&mut inside);
        let outside_id = self.build_recursive(&mut outside);
        self.nodes[node_id].inside = inside_id;
        self.nodes[node_id].outside = outside_id;
        Some(node_id)
    }

    /// Exact nearest neighbor of `q`; ties resolve to the lower index.
    pub fn nearest(&self, q: &[f64]) -> Option<(usize, f64)> {
        let root = self.root?;
        let mut best: Option<(f64, usize)> = None;
        self.search(root, q, &mut best);
        best.map(|(d, i)| (i, d))
    }

    fn search(&self, node_id: usize, q: &[f64], best: &mut Option<(f64, usize)>) {
        let node = &self.nodes[node_id];
        let d = l2_distance(q, &self.items[node.item]);
        let better = match *best {
            None => true,
            Some((bd, bi)) => d < bd || (d == bd && node.item < bi),
        };
        if better {
            *best = Some((d, node.item));
        }
        let bd = best.map(|(b, _)| b).unwrap_or(f64::INFINITY);
        if d < node.threshold {
            if let Some(inside) = node.inside {
                self.search(inside, q, best);
            }
            let bd = best.map(|(b, _)| b).unwrap_or(f64::INFINITY);
            if d + bd >= node.threshold {
                if let Some(outside) = node.outside {
                    self.search(outside, q, best);
                }
            }
        } else {
            if let Some(outside) = node.outside {
                self.search(outside, q, best);
            }
            let bd = best.map(|(b, _)| b).unwrap_or(f64::INFINITY);
            if d - bd <= node.threshold {
                if let Some(inside) = node.inside {
                    self.search(inside, q, best);
                }
            }
        }
        let _ = bd;
    }
}
