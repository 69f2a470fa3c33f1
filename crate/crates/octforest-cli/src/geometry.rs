use octforest::search::Matcher;
use octforest::{Octant, Space};

/// Smooth distortion of each unit tree: `y_i = x_i + a sin(pi x_i) sin(pi x_{i+1}) / pi`.
///
/// Faces of the unit box stay fixed, so neighbouring trees still match up.
#[derive(Clone, Copy, Debug)]
pub struct Distortion {
    pub dim: usize,
    pub amplitude: f64,
}

impl Distortion {
    pub fn new(dim: usize, amplitude: f64) -> Self {
        assert!((0.0..0.5).contains(&amplitude), "amplitude must lie in [0, 0.5)");
        Distortion { dim, amplitude }
    }

    fn next(&self, i: usize) -> usize {
        (i + 1) % self.dim
    }

    pub fn map(&self, x: &[f64; 3]) -> [f64; 3] {
        let pi = std::f64::consts::PI;
        let mut y = *x;
        for i in 0..self.dim {
            y[i] = x[i] + self.amplitude * (pi * x[i]).sin() * (pi * x[self.next(i)]).sin() / pi;
        }
        y
    }

    fn jacobian(&self, x: &[f64; 3]) -> [[f64; 3]; 3] {
        let pi = std::f64::consts::PI;
        let mut j = [[0.0; 3]; 3];
        for (i, row) in j.iter_mut().enumerate().take(self.dim) {
            let k = self.next(i);
            row[i] += 1.0 + self.amplitude * (pi * x[i]).cos() * (pi * x[k]).sin();
            row[k] += self.amplitude * (pi * x[i]).sin() * (pi * x[k]).cos();
        }
        j
    }

    /// Bound on the stretch of any segment under the map.
    pub fn lipschitz(&self) -> f64 {
        1.0 + 2.0 * self.amplitude
    }

    /// Newton inverse on the unit box.
    pub fn inverse(&self, y: &[f64; 3]) -> [f64; 3] {
        let mut x = *y;
        for _ in 0..50 {
            let f = self.map(&x);
            let r: Vec<f64> = (0..self.dim).map(|i| f[i] - y[i]).collect();
            if r.iter().all(|v| v.abs() < 1e-14) {
                break;
            }
            let dx = solve(self.dim, self.jacobian(&x), &r);
            for i in 0..self.dim {
                x[i] = (x[i] - dx[i]).clamp(0.0, 1.0);
            }
        }
        x
    }
}

fn solve(d: usize, mut a: [[f64; 3]; 3], b: &[f64]) -> [f64; 3] {
    let mut b3 = [0.0; 3];
    b3[..d].copy_from_slice(b);
    for c in 0..d {
        let p = (c..d).max_by(|&i, &k| a[i][c].abs().total_cmp(&a[k][c].abs())).unwrap();
        a.swap(c, p);
        b3.swap(c, p);
        for r in c + 1..d {
            let m = a[r][c] / a[c][c];
            for k in c..d {
                a[r][k] -= m * a[c][k];
            }
            b3[r] -= m * b3[c];
        }
    }
    let mut x = [0.0; 3];
    for c in (0..d).rev() {
        let s: f64 = (c + 1..d).map(|k| a[c][k] * x[k]).sum();
        x[c] = (b3[c] - s) / a[c][c];
    }
    x
}

/// Point location on the distorted forest: a bounding-sphere test above the leaves and an
/// exact inverse-map test at the leaves.
pub struct PointMatcher<'a> {
    pub sp: Space,
    pub map: Distortion,
    /// Physical points with the tree they were generated in.
    pub points: &'a [(u32, [f64; 3])],
    /// Reference coordinates of each point, filled on first exact test.
    reference: Vec<Option<[f64; 3]>>,
    pub interior_visits: u64,
    pub interior_tests: u64,
    pub leaf_tests: u64,
    pub found: Vec<(usize, Octant)>,
    sphere: ([f64; 3], f64),
}

impl<'a> PointMatcher<'a> {
    pub fn new(sp: Space, map: Distortion, points: &'a [(u32, [f64; 3])]) -> Self {
        PointMatcher {
            sp,
            map,
            points,
            reference: vec![None; points.len()],
            interior_visits: 0,
            interior_tests: 0,
            leaf_tests: 0,
            found: Vec::new(),
            sphere: ([0.0; 3], 0.0),
        }
    }

    fn unit_box(&self, o: &Octant) -> ([f64; 3], f64) {
        let l = self.sp.root_len() as f64;
        let mut lo = [0.0; 3];
        for j in 0..self.sp.d() {
            lo[j] = o.x[j] as f64 / l;
        }
        (lo, self.sp.len(o.level) as f64 / l)
    }
}

impl Matcher for PointMatcher<'_> {
    fn visit(&mut self, o: &Octant, is_leaf: bool) {
        if is_leaf {
            return;
        }
        self.interior_visits += 1;
        let d = self.sp.d();
        let (lo, h) = self.unit_box(o);
        let mut mid = lo;
        for m in mid.iter_mut().take(d) {
            *m += h / 2.0;
        }
        let r = self.map.lipschitz() * h * (d as f64).sqrt() / 2.0;
        self.sphere = (self.map.map(&mid), r * (1.0 + 1e-12));
    }

    fn matches(&mut self, o: &Octant, is_leaf: bool, q: usize) -> bool {
        let (t, y) = self.points[q];
        if t != o.tree {
            return false;
        }
        let d = self.sp.d();
        if !is_leaf {
            self.interior_tests += 1;
            let (c, r) = self.sphere;
            let dist2: f64 = (0..d).map(|j| (y[j] - c[j]).powi(2)).sum();
            return dist2 <= r * r;
        }
        self.leaf_tests += 1;
        let x = *self.reference[q].get_or_insert_with(|| self.map.inverse(&y));
        let (lo, h) = self.unit_box(o);
        let hit = (0..d).all(|j| lo[j] <= x[j] && (x[j] < lo[j] + h || (x[j] >= 1.0 && lo[j] + h >= 1.0)));
        if hit {
            self.found.push((q, *o));
        }
        hit
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trips() {
        let m = Distortion::new(3, 0.3);
        for x in [[0.1, 0.5, 0.9], [0.0, 1.0, 0.25], [0.7, 0.2, 0.4]] {
            let y = m.map(&x);
            let back = m.inverse(&y);
            for j in 0..3 {
                assert!((back[j] - x[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn faces_are_fixed() {
        let m = Distortion::new(2, 0.4);
        let y = m.map(&[0.0, 0.3, 0.0]);
        assert_eq!(y[0], 0.0);
        let y = m.map(&[0.6, 1.0, 0.0]);
        assert!((y[1] - 1.0).abs() < 1e-15);
    }
}
