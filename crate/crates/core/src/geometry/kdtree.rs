use super::{OrientedPointCloud, Point3};

/// Exact nearest-neighbor index over a fixed point set.
///
/// Queries return exactly what a brute-force scan in input order would:
/// distance ties resolve to the smallest original index. Immutable after
/// construction; concurrent reads are safe.
#[derive(Clone, Debug)]
pub struct KdTree {
    pts: Vec<Point3>,
    /// Permutation of point indices arranged as an implicit tree: the node
    /// for range [lo, hi) sits at mid = lo + (hi - lo) / 2.
    order: Vec<u32>,
    /// Split axis per tree slot (indexed like `order`).
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: Vec<Point3>) -> Self {
        let n = points.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut axes = vec![0u8; n];
        if n > 0 {
            build(&points, &mut order, &mut axes, 0, n);
        }
        Self {
            pts: points,
            order,
            axes,
        }
    }

    pub fn from_cloud(cloud: &OrientedPointCloud) -> Self {
        Self::new(cloud.position_vec())
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    pub fn point(&self, index: usize) -> Point3 {
        self.pts[index]
    }

    /// Exact nearest neighbor: `(original index, squared distance)`.
    pub fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        if self.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(q, 0, self.len(), &mut best);
        Some(best)
    }

    fn nearest_rec(&self, q: &Point3, lo: usize, hi: usize, best: &mut (usize, f64)) {
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid] as usize;
        let d2 = (self.pts[idx] - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && idx < best.0) {
            *best = (idx, d2);
        }
        let axis = self.axes[mid] as usize;
        let delta = q[axis] - self.pts[idx][axis];
        let (near_lo, near_hi, far_lo, far_hi) = if delta < 0.0 {
            (lo, mid, mid + 1, hi)
        } else {
            (mid + 1, hi, lo, mid)
        };
        if near_lo < near_hi {
            self.nearest_rec(q, near_lo, near_hi, best);
        }
        // <= keeps equal-distance candidates reachable so index tie-breaking
        // stays exact.
        if far_lo < far_hi && delta * delta <= best.1 {
            self.nearest_rec(q, far_lo, far_hi, best);
        }
    }

    /// The k exact nearest neighbors, ascending by (squared distance, index).
    pub fn k_nearest(&self, q: &Point3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.k_nearest_rec(q, 0, self.len(), k, &mut heap);
        let mut out: Vec<(usize, f64)> = heap.into_iter().map(|(d2, i)| (i, d2)).collect();
        out.sort_by(|a, b| (a.1, a.0).partial_cmp(&(b.1, b.0)).unwrap());
        out
    }

    fn k_nearest_rec(
        &self,
        q: &Point3,
        lo: usize,
        hi: usize,
        k: usize,
        heap: &mut Vec<(f64, usize)>,
    ) {
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid] as usize;
        let d2 = (self.pts[idx] - q).norm_squared();
        let cand = (d2, idx);
        if heap.len() < k {
            heap.push(cand);
            if heap.len() == k {
                heap.sort_by(|a, b| b.partial_cmp(a).unwrap());
            }
        } else if cand < heap[0] {
            // heap[0] is the current worst (max) under lexicographic order.
            let pos = heap
                .binary_search_by(|e| cand.partial_cmp(e).unwrap())
                .unwrap_or_else(|p| p);
            heap.insert(pos, cand);
            heap.remove(0);
        }
        let axis = self.axes[mid] as usize;
        let delta = q[axis] - self.pts[idx][axis];
        let (near_lo, near_hi, far_lo, far_hi) = if delta < 0.0 {
            (lo, mid, mid + 1, hi)
        } else {
            (mid + 1, hi, lo, mid)
        };
        if near_lo < near_hi {
            self.k_nearest_rec(q, near_lo, near_hi, k, heap);
        }
        let worst = if heap.len() < k {
            f64::INFINITY
        } else {
            heap[0].0
        };
        if far_lo < far_hi && delta * delta <= worst {
            self.k_nearest_rec(q, far_lo, far_hi, k, heap);
        }
    }

    /// All points with distance <= radius, ascending by original index.
    pub fn within_radius(&self, q: &Point3, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.for_each_within(q, radius, |i, d2| out.push((i, d2)));
        out.sort_by_key(|&(i, _)| i);
        out
    }

    /// Calls `visit(index, squared distance)` for every point with distance
    /// <= radius, in unspecified order. Allocation-free for hot loops.
    pub fn for_each_within<F: FnMut(usize, f64)>(&self, q: &Point3, radius: f64, mut visit: F) {
        if !self.is_empty() && radius >= 0.0 {
            self.within_rec(q, 0, self.len(), radius * radius, &mut visit);
        }
    }

    fn within_rec<F: FnMut(usize, f64)>(
        &self,
        q: &Point3,
        lo: usize,
        hi: usize,
        r2: f64,
        visit: &mut F,
    ) {
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid] as usize;
        let d2 = (self.pts[idx] - q).norm_squared();
        if d2 <= r2 {
            visit(idx, d2);
        }
        let axis = self.axes[mid] as usize;
        let delta = q[axis] - self.pts[idx][axis];
        if lo < mid && (delta < 0.0 || delta * delta <= r2) {
            self.within_rec(q, lo, mid, r2, visit);
        }
        if mid + 1 < hi && (delta >= 0.0 || delta * delta <= r2) {
            self.within_rec(q, mid + 1, hi, r2, visit);
        }
    }
}

fn build(pts: &[Point3], order: &mut [u32], axes: &mut [u8], lo: usize, hi: usize) {
    if hi - lo == 0 {
        return;
    }
    // Widest-extent axis of this range; ties pick the smaller axis index.
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for &i in &order[lo..hi] {
        let p = pts[i as usize];
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    let mut axis = 0;
    for a in 1..3 {
        if max[a] - min[a] > max[axis] - min[axis] {
            axis = a;
        }
    }
    let mid = lo + (hi - lo) / 2;
    order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
        let ka = (pts[a as usize][axis], a);
        let kb = (pts[b as usize][axis], b);
        ka.partial_cmp(&kb).unwrap()
    });
    axes[mid] = axis as u8;
    if mid > lo {
        build(pts, order, axes, lo, mid);
    }
    if mid + 1 < hi {
        build(pts, order, axes, mid + 1, hi);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = crate::rng::stream_rng(seed, 0);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    fn brute_nearest(pts: &[Point3], q: &Point3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in pts.iter().enumerate() {
            let d2 = (p - q).norm_squared();
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    }

    #[test]
    fn nearest_matches_brute_force() {
        let pts = random_points(500, 3);
        let tree = KdTree::new(pts.clone());
        let queries = random_points(200, 4);
        for q in &queries {
            assert_eq!(tree.nearest(q).unwrap(), brute_nearest(&pts, q));
        }
        // Query exactly at stored points too.
        for (i, q) in pts.iter().enumerate().step_by(17) {
            let (j, d2) = tree.nearest(q).unwrap();
            assert_eq!(d2, 0.0);
            // First duplicate wins; usually i itself.
            assert!(j <= i);
        }
    }

    #[test]
    fn nearest_tie_breaks_to_smallest_index() {
        // Two points equidistant from the query.
        let pts = vec![
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0),
            Point3::new(0.0, 5.0, 0.0),
        ];
        let tree = KdTree::new(pts);
        let (i, _) = tree.nearest(&Point3::origin()).unwrap();
        assert_eq!(i, 0);
    }

    #[test]
    fn k_nearest_matches_brute_force() {
        let pts = random_points(300, 5);
        let tree = KdTree::new(pts.clone());
        let queries = random_points(50, 6);
        for q in &queries {
            for k in [1usize, 3, 10, 299, 300, 350] {
                let got = tree.k_nearest(q, k);
                let mut want: Vec<(usize, f64)> = pts
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, (p - q).norm_squared()))
                    .collect();
                want.sort_by(|a, b| (a.1, a.0).partial_cmp(&(b.1, b.0)).unwrap());
                want.truncate(k);
                assert_eq!(got, want, "k = {k}");
            }
        }
    }

    #[test]
    fn within_radius_matches_brute_force() {
        let pts = random_points(400, 7);
        let tree = KdTree::new(pts.clone());
        let queries = random_points(50, 8);
        for q in &queries {
            for r in [0.05, 0.2, 0.7] {
                let got = tree.within_radius(q, r);
                let want: Vec<(usize, f64)> = pts
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, (p - q).norm_squared()))
                    .filter(|&(_, d2)| d2 <= r * r)
                    .collect();
                assert_eq!(got, want, "r = {r}");
            }
        }
    }

    #[test]
    fn empty_tree_returns_nothing() {
        let tree = KdTree::new(Vec::new());
        assert!(tree.nearest(&Point3::origin()).is_none());
        assert!(tree.k_nearest(&Point3::origin(), 3).is_empty());
        assert!(tree.within_radius(&Point3::origin(), 1.0).is_empty());
    }
}
