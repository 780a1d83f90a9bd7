//! One-dimensional quadrature, finite-difference weights and ray clipping.

use gauss_quad::legendre::GaussLegendre;
use std::num::NonZeroUsize;

/// Gauss–Legendre rule on [0, 1], nodes ascending.
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        GaussRule {
            nodes: x.iter().map(|&t| 0.5 * (t + 1.0)).collect(),
            weights: w.iter().map(|&t| 0.5 * t).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let h = b - a;
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(a + h * x);
        }
        s * h
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let n = NonZeroUsize::new(n.max(1)).unwrap();
    let mut pairs: Vec<(f64, f64)> = GaussLegendre::new(n).as_node_weight_pairs().to_vec();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Weights of a composite rule on `n` uniformly spaced points with spacing `h`.
///
/// Fourth order for n ≥ 8, Simpson for other odd counts, trapezoid otherwise.
pub fn uniform_weights(n: usize, h: f64) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ if n >= 8 => {
            let mut w = vec![h; n];
            let ends = [17.0 / 48.0, 59.0 / 48.0, 43.0 / 48.0, 49.0 / 48.0];
            for (k, e) in ends.iter().enumerate() {
                w[k] = e * h;
                w[n - 1 - k] = e * h;
            }
            w
        }
        _ if n % 2 == 1 => {
            let mut w = vec![0.0; n];
            for (k, wk) in w.iter_mut().enumerate() {
                *wk = if k == 0 || k == n - 1 {
                    h / 3.0
                } else if k % 2 == 1 {
                    4.0 * h / 3.0
                } else {
                    2.0 * h / 3.0
                };
            }
            w
        }
        _ => {
            let mut w = vec![h; n];
            w[0] = 0.5 * h;
            w[n - 1] = 0.5 * h;
            w
        }
    }
}

/// Finite-difference weights at `x0` for derivatives 0..=m on arbitrary nodes (Fornberg).
pub fn fornberg(x0: f64, nodes: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Lagrange weights on four uniform nodes at offsets -1, 0, 1, 2 for fractional position t.
#[inline]
pub fn cubic_weights(t: f64) -> [f64; 4] {
    let tm1 = t - 1.0;
    let tm2 = t - 2.0;
    let tp1 = t + 1.0;
    [
        -t * tm1 * tm2 / 6.0,
        tp1 * tm1 * tm2 / 2.0,
        -tp1 * t * tm2 / 2.0,
        tp1 * t * tm1 / 6.0,
    ]
}

/// Lagrange weights on four arbitrary nodes.
#[inline]
pub fn lagrange4(x: f64, n: [f64; 4]) -> [f64; 4] {
    let mut w = [1.0; 4];
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                w[i] *= (x - n[j]) / (n[i] - n[j]);
            }
        }
    }
    w
}

/// Up to four disjoint parameter intervals.
#[derive(Clone, Copy, Debug, Default)]
pub struct Segments {
    pub len: usize,
    pub seg: [(f64, f64); 4],
}

impl Segments {
    pub fn single(a: f64, b: f64) -> Self {
        let mut s = Segments::default();
        if b > a {
            s.seg[0] = (a, b);
            s.len = 1;
        }
        s
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, f64)> {
        self.seg[..self.len].iter()
    }
}

/// Constraint `A p² + B p + C ≥ 0` on a ray parameter p.
#[derive(Clone, Copy, Debug)]
pub struct Quadric {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Quadric {
    #[inline]
    fn eval(&self, p: f64) -> f64 {
        (self.a * p + self.b) * p + self.c
    }

    fn roots(&self, out: &mut [f64; 2]) -> usize {
        let (a, b, c) = (self.a, self.b, self.c);
        let scale = a.abs().max(b.abs()).max(c.abs());
        if scale == 0.0 {
            return 0;
        }
        if a.abs() <= 1e-14 * scale {
            if b == 0.0 {
                return 0;
            }
            out[0] = -c / b;
            return 1;
        }
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return 0;
        }
        let sq = disc.sqrt();
        let qq = -0.5 * (b + b.signum() * sq);
        if qq == 0.0 {
            out[0] = 0.0;
            return 1;
        }
        out[0] = qq / a;
        out[1] = c / qq;
        2
    }
}

/// Sub-intervals of [0, len] on which every constraint holds.
pub fn clip_interval(len: f64, constraints: &[Quadric]) -> Segments {
    if constraints.is_empty() {
        return Segments::single(0.0, len);
    }
    let mut pts = [0.0f64; 12];
    let mut np = 0;
    pts[np] = 0.0;
    np += 1;
    for q in constraints.iter().take(5) {
        let mut r = [0.0; 2];
        let k = q.roots(&mut r);
        for &x in &r[..k] {
            if x > 0.0 && x < len {
                pts[np] = x;
                np += 1;
            }
        }
    }
    pts[np] = len;
    np += 1;
    let p = &mut pts[..np];
    p.sort_by(|a, b| a.total_cmp(b));
    let mut out = Segments::default();
    for w in p.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= 1e-15 * len.max(1.0) {
            continue;
        }
        let mid = 0.5 * (a + b);
        if constraints.iter().all(|q| q.eval(mid) >= 0.0) {
            if out.len > 0 && (out.seg[out.len - 1].1 - a).abs() <= 1e-15 * len.max(1.0) {
                out.seg[out.len - 1].1 = b;
            } else if out.len < 4 {
                out.seg[out.len] = (a, b);
                out.len += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rule_integrates_polynomials() {
        let r = GaussRule::new(5);
        let v = r.integrate(0.0, 2.0, |x| x.powi(9));
        assert!((v - 2f64.powi(10) / 10.0).abs() < 1e-11);
        let (x, _) = gauss_legendre(6);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn uniform_weights_are_fourth_order() {
        for &n in &[9usize, 17, 33] {
            let h = 1.0 / (n - 1) as f64;
            let w = uniform_weights(n, h);
            let s: f64 = w.iter().enumerate().map(|(k, w)| w * (k as f64 * h).powi(3)).sum();
            assert!((s - 0.25).abs() < 1e-13);
        }
    }

    #[test]
    fn fornberg_recovers_central_stencil() {
        let c = fornberg(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 2);
        let want = [-1.0 / 12.0, 4.0 / 3.0, -2.5, 4.0 / 3.0, -1.0 / 12.0];
        for (a, b) in c[2].iter().zip(want) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn clipping_a_ball_chord() {
        // ray from (0,0,-2) along +z through the unit ball: p in [1, 3]
        let q = Quadric { a: -1.0, b: 4.0, c: 1.0 - 4.0 };
        let s = clip_interval(10.0, &[q]);
        assert_eq!(s.len, 1);
        assert!((s.seg[0].0 - 1.0).abs() < 1e-14 && (s.seg[0].1 - 3.0).abs() < 1e-14);
        let s = clip_interval(2.0, &[q]);
        assert!((s.seg[0].1 - 2.0).abs() < 1e-14);
        let miss = Quadric { a: -1.0, b: 0.0, c: -1.0 };
        assert_eq!(clip_interval(5.0, &[miss]).len, 0);
    }
}
