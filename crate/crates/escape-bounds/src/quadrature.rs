//! Quadrature rules over the bundled domain shapes: Gauss-Legendre segments,
//! polar grids for disks, and spherical product grids for balls.

/// Nodes and positive weights; nodes lie in the closed domain.
#[derive(Clone, Debug)]
pub struct Quadrature {
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, &w)| w * f(x))
            .sum()
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on the
/// Legendre recurrence. Exact for polynomials of degree 2n - 1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-based initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            // evaluate P_n and P_n' at x via the three-term recurrence
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            pp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / pp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss-Legendre on an arbitrary segment [a, b].
pub fn gauss_legendre_on(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        x.iter().map(|&t| mid + half * t).collect(),
        w.iter().map(|&v| v * half).collect(),
    )
}

/// Tensor Gauss-Legendre on [-1, 1]^d (used with an indicator for boxes).
pub fn tensor_box(d: usize, n_per_axis: usize) -> Quadrature {
    let (x, w) = gauss_legendre(n_per_axis);
    let mut nodes = vec![vec![]];
    let mut weights = vec![1.0];
    for _ in 0..d {
        let mut nn = Vec::new();
        let mut ww = Vec::new();
        for (node, wt) in nodes.iter().zip(&weights) {
            for (xi, wi) in x.iter().zip(&w) {
                let mut v = node.clone();
                v.push(*xi);
                nn.push(v);
                ww.push(wt * wi);
            }
        }
        nodes = nn;
        weights = ww;
    }
    Quadrature { nodes, weights }
}

/// Polar Gauss grid on the unit disk: Gauss-Legendre in radius (weighted by
/// r) and a uniform, spectrally accurate grid in angle.
pub fn polar_disk(n_r: usize, n_theta: usize) -> Quadrature {
    let (r, wr) = gauss_legendre_on(0.0, 1.0, n_r);
    let dtheta = std::f64::consts::TAU / n_theta as f64;
    let mut nodes = Vec::with_capacity(n_r * n_theta);
    let mut weights = Vec::with_capacity(n_r * n_theta);
    for (ri, wi) in r.iter().zip(&wr) {
        for k in 0..n_theta {
            let th = dtheta * (k as f64 + 0.5);
            nodes.push(vec![ri * th.cos(), ri * th.sin()]);
            weights.push(wi * ri * dtheta);
        }
    }
    Quadrature { nodes, weights }
}

/// Product Gauss grid on the unit ball in 3D: Gauss in radius (weight r^2),
/// Gauss in the polar cosine, uniform in azimuth.
pub fn product_ball3(n_r: usize, n_cos: usize, n_phi: usize) -> Quadrature {
    let (r, wr) = gauss_legendre_on(0.0, 1.0, n_r);
    let (c, wc) = gauss_legendre(n_cos);
    let dphi = std::f64::consts::TAU / n_phi as f64;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for (ri, wri) in r.iter().zip(&wr) {
        for (ci, wci) in c.iter().zip(&wc) {
            let s = (1.0 - ci * ci).sqrt();
            for k in 0..n_phi {
                let phi = dphi * (k as f64 + 0.5);
                nodes.push(vec![ri * s * phi.cos(), ri * s * phi.sin(), ri * ci]);
                weights.push(wri * wci * dphi * ri * ri);
            }
        }
    }
    Quadrature { nodes, weights }
}

/// Gauss-Legendre segment quadrature as a 1-D domain rule.
pub fn segment(n: usize) -> Quadrature {
    let (x, w) = gauss_legendre(n);
    Quadrature {
        nodes: x.into_iter().map(|v| vec![v]).collect(),
        weights: w,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        // integral of x^k over [-1,1]
        for k in 0..=15u32 {
            let approx: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(k as i32)).sum();
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert!((approx - exact).abs() < 1e-13, "k={k}");
        }
    }

    #[test]
    fn disk_area_and_moment() {
        let q = polar_disk(24, 48);
        let area = q.integrate(|_| 1.0);
        assert!((area - std::f64::consts::PI).abs() < 1e-10);
        let m2 = q.integrate(|x| x[0] * x[0] + x[1] * x[1]);
        assert!((m2 - std::f64::consts::PI / 2.0).abs() < 1e-10);
    }

    #[test]
    fn ball_volume() {
        let q = product_ball3(16, 16, 24);
        let vol = q.integrate(|_| 1.0);
        assert!((vol - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-9);
    }

    #[test]
    fn weights_positive_nodes_inside() {
        for q in [polar_disk(8, 16), product_ball3(6, 6, 8), segment(12)] {
            assert!(q.weights.iter().all(|&w| w > 0.0));
            assert!(q
                .nodes
                .iter()
                .all(|x| x.iter().map(|v| v * v).sum::<f64>() <= 1.0 + 1e-12));
        }
    }
}
