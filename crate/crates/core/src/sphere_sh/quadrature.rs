//! Gauss-Legendre machinery and an exact product quadrature on the sphere.

use super::UnitDirection;

/// Legendre polynomial `P_l(x)` by the three-term recurrence.
pub fn legendre(l: usize, x: f64) -> f64 {
    match l {
        0 => 1.0,
        1 => x,
        _ => {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=l {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}

fn legendre_derivative(l: usize, x: f64) -> f64 {
    if l == 0 {
        return 0.0;
    }
    // (1 - x^2) P_l'(x) = l (P_{l-1}(x) - x P_l(x))
    l as f64 * (legendre(l - 1, x) - x * legendre(l, x)) / (1.0 - x * x)
}

/// `n`-node Gauss-Legendre rule on [-1, 1] (nodes, weights), found by
/// Newton iteration from Chebyshev initial guesses.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let dx = legendre(n, x) / legendre_derivative(n, x);
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let df = legendre_derivative(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * df * df);
    }
    (nodes, weights)
}

/// Sphere quadrature: Gauss-Legendre in `cos(theta)` times a uniform
/// azimuth grid. Integrates spherical polynomials exactly (to rounding)
/// when their degree is below both node counts; weights sum to `4 pi`.
pub fn product_quadrature(n_polar: usize, n_az: usize) -> Vec<(UnitDirection, f64)> {
    let (nodes, weights) = gauss_legendre(n_polar);
    let mut points = Vec::with_capacity(n_polar * n_az);
    let waz = std::f64::consts::TAU / n_az as f64;
    for (t, wt) in nodes.iter().zip(&weights) {
        let r = (1.0 - t * t).max(0.0).sqrt();
        for j in 0..n_az {
            let phi = waz * j as f64;
            let dir = UnitDirection::normalize(r * phi.cos(), r * phi.sin(), *t)
                .expect("quadrature node");
            points.push((dir, wt * waz));
        }
    }
    points
}
