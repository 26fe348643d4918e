use crate::fields::Vec3;

pub(super) fn squared_distance(a: &Vec3, b: &Vec3) -> f64 {
    (a - b).norm_squared()
}

/// Static 3-d tree for nearest-neighbor queries. Distances are computed the
/// same way a linear scan would, and ties resolve to the lowest index, so
/// results match brute force exactly.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Point indices; the pivot of a subrange `[lo, hi)` sits at its midpoint.
    order: Vec<usize>,
    /// Split axis of the pivot stored at each position of `order`.
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        build(&points, &mut order, &mut axes, 0);
        Self { points, order, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Index of and squared distance to the closest point.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.order.len(), &mut best);
        Some(best)
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d = squared_distance(q, p);
        if d < best.1 || (d == best.1 && idx < best.0) {
            *best = (idx, d);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best);
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, best);
        }
    }
}

fn build(points: &[Vec3], order: &mut [usize], axes: &mut [u8], depth: usize) {
    if order.len() <= 1 {
        if let Some(a) = axes.first_mut() {
            *a = (depth % 3) as u8;
        }
        return;
    }
    // split along the widest extent of this subset
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in order.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |a, b| points[*a][axis].total_cmp(&points[*b][axis]).then(a.cmp(b)));
    axes[mid] = axis as u8;
    let (left, rest) = order.split_at_mut(mid);
    let (left_axes, rest_axes) = axes.split_at_mut(mid);
    build(points, left, left_axes, depth + 1);
    build(points, &mut rest[1..], &mut rest_axes[1..], depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(points: &[Vec3], q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (k, p) in points.iter().enumerate() {
            let d = squared_distance(q, p);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    fn arb_points(max: usize) -> impl Strategy<Value = Vec<Vec3>> {
        proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..max)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn matches_brute_force(points in arb_points(2000), queries in arb_points(50)) {
            let tree = KdTree::new(points.clone());
            for q in &queries {
                prop_assert_eq!(tree.nearest(q).unwrap(), brute(&points, q));
            }
        }
    }

    #[test]
    fn duplicates_and_lattice_ties() {
        // many equidistant candidates: lowest index wins, as in a scan
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Vec3::new(i as f64, j as f64, 0.0));
                pts.push(Vec3::new(i as f64, j as f64, 0.0));
            }
        }
        let tree = KdTree::new(pts.clone());
        for q in [Vec3::new(4.5, 4.5, 0.0), Vec3::new(0.5, 9.0, 1.0), Vec3::new(3.0, 3.0, 0.0)] {
            assert_eq!(tree.nearest(&q).unwrap(), brute(&pts, &q));
        }
        assert!(KdTree::new(vec![]).nearest(&Vec3::zeros()).is_none());
    }
}
