//! Viscous-plastic constitutive law, ice strength and surface tractions.
//!
//! Velocity gradients are `g[i][j] = d v_i / d x_j`.

use super::PhysParams;

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

const I2: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

#[inline]
pub fn ddot(a: &Mat2, b: &Mat2) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

#[inline]
fn axpy(a: f64, x: &Mat2, b: f64, y: &Mat2) -> Mat2 {
    [
        [a * x[0][0] + b * y[0][0], a * x[0][1] + b * y[0][1]],
        [a * x[1][0] + b * y[1][0], a * x[1][1] + b * y[1][1]],
    ]
}

/// Strain rate and its deviator.
#[inline]
pub fn strain(g: &Mat2) -> (Mat2, Mat2) {
    let off = 0.5 * (g[0][1] + g[1][0]);
    let eps = [[g[0][0], off], [off, g[1][1]]];
    let h = 0.5 * (g[0][0] + g[1][1]);
    let dev = [[g[0][0] - h, off], [off, g[1][1] - h]];
    (eps, dev)
}

#[inline]
fn trace(m: &Mat2) -> f64 {
    m[0][0] + m[1][1]
}

/// Regularized strain-rate magnitude.
#[inline]
pub fn delta(eps: &Mat2, p: &PhysParams) -> f64 {
    let (_, dev) = strain(eps);
    let tr = trace(eps);
    (0.5 * ddot(&dev, &dev) + tr * tr + p.delta_min * p.delta_min).sqrt()
}

#[inline]
pub fn ice_strength(h: f64, a: f64, p: &PhysParams) -> f64 {
    p.p_star * h * (-p.c_conc * (1.0 - a)).exp()
}

/// `S = eps'/2 + tr(eps) I`, so that `sigma = zeta S - P/2 I`.
#[inline]
fn shape(g: &Mat2) -> (Mat2, f64) {
    let (eps, dev) = strain(g);
    let tr = trace(&eps);
    (axpy(0.5, &dev, tr, &I2), tr)
}

/// Internal stress.
#[inline]
pub fn stress(g: &Mat2, a: f64, h: f64, p: &PhysParams) -> Mat2 {
    let (s, _) = shape(g);
    let big_p = ice_strength(h, a, p);
    let zeta = big_p / (2.0 * delta(g, p));
    axpy(zeta, &s, -0.5 * big_p, &I2)
}

/// Stress per unit ice strength: `d sigma / d P`.
#[inline]
pub fn stress_per_strength(g: &Mat2, p: &PhysParams) -> Mat2 {
    let (s, _) = shape(g);
    axpy(1.0 / (2.0 * delta(g, p)), &s, -0.5, &I2)
}

/// Derivative of the stress in the velocity-gradient direction `dg`.
#[inline]
pub fn stress_dv(g: &Mat2, a: f64, h: f64, dg: &Mat2, p: &PhysParams) -> Mat2 {
    let (s, tr) = shape(g);
    let (ds, dtr) = shape(dg);
    let (_, dev) = strain(g);
    let (_, ddev) = strain(dg);
    let big_p = ice_strength(h, a, p);
    let d = delta(g, p);
    let dd = (0.5 * ddot(&dev, &ddev) + tr * dtr) / d;
    let zeta = big_p / (2.0 * d);
    let dzeta = -big_p / (2.0 * d * d) * dd;
    axpy(dzeta, &s, zeta, &ds)
}

/// Derivative of the stress with respect to the concentration.
#[inline]
pub fn stress_da(g: &Mat2, a: f64, h: f64, p: &PhysParams) -> Mat2 {
    let dp = p.c_conc * ice_strength(h, a, p);
    stress_per_strength(g, p).map(|r| r.map(|x| dp * x))
}

/// Derivative of the stress with respect to the thickness.
#[inline]
pub fn stress_dh(g: &Mat2, a: f64, p: &PhysParams) -> Mat2 {
    let dp = p.p_star * (-p.c_conc * (1.0 - a)).exp();
    stress_per_strength(g, p).map(|r| r.map(|x| dp * x))
}

/// Ocean and wind traction on the ice.
#[inline]
pub fn forcing_tau(v: Vec2, v_ocean: Vec2, v_atm: Vec2, p: &PhysParams) -> Vec2 {
    let w = [v_ocean[0] - v[0], v_ocean[1] - v[1]];
    let nw = w[0].hypot(w[1]);
    let na = v_atm[0].hypot(v_atm[1]);
    let co = p.c_ocean * p.rho_ocean * nw;
    let ca = p.c_atm * p.rho_atm * na;
    [co * w[0] + ca * v_atm[0], co * w[1] + ca * v_atm[1]]
}

/// Derivative of the traction with respect to the ice velocity, in direction `dv`.
#[inline]
pub fn tau_dv(v: Vec2, v_ocean: Vec2, dv: Vec2, p: &PhysParams) -> Vec2 {
    let w = [v_ocean[0] - v[0], v_ocean[1] - v[1]];
    let nw = w[0].hypot(w[1]);
    if nw == 0.0 {
        return [0.0, 0.0];
    }
    let c = p.c_ocean * p.rho_ocean;
    let proj = (w[0] * dv[0] + w[1] * dv[1]) / nw;
    [-c * (nw * dv[0] + proj * w[0]), -c * (nw * dv[1] + proj * w[1])]
}

/// Planar Coriolis operator `f e_r x w`.
#[inline]
pub fn coriolis(w: Vec2, f: f64) -> Vec2 {
    [-f * w[1], f * w[0]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p() -> PhysParams {
        PhysParams::default()
    }

    #[test]
    fn strain_examples() {
        let (e, d) = strain(&[[0.0; 2]; 2]);
        assert_eq!((e, d), ([[0.0; 2]; 2], [[0.0; 2]; 2]));
        let (e, d) = strain(&[[2.0, 0.0], [0.0, 2.0]]);
        assert_eq!(e, [[2.0, 0.0], [0.0, 2.0]]);
        assert_eq!(d, [[0.0; 2]; 2]);
        assert_eq!(trace(&e), 4.0);
        let (e, d) = strain(&[[0.0, 1.0], [0.0, 0.0]]);
        assert_eq!(e, [[0.0, 0.5], [0.5, 0.0]]);
        assert_eq!(d, e);
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta(&[[0.0; 2]; 2], &p()), 2e-9);
        let d = 1e-6;
        assert_relative_eq!(delta(&[[d, 0.0], [0.0, d]], &p()), (4e-12f64 + 4e-18).sqrt(), max_relative = 1e-15);
        let s = 3e-7;
        let shear = [[0.0, 0.5 * s], [0.5 * s, 0.0]];
        assert_relative_eq!(delta(&shear, &p()), (s * s / 4.0 + 4e-18).sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn strength_examples() {
        assert_relative_eq!(ice_strength(0.3, 1.0, &p()), 8250.0, max_relative = 1e-15);
        assert_eq!(ice_strength(0.0, 0.4, &p()), 0.0);
        assert_relative_eq!(ice_strength(0.3, 0.9, &p()), 8250.0 * (-2f64).exp(), max_relative = 1e-15);
        assert!((ice_strength(0.3, 0.9, &p()) - 1116.5).abs() < 0.1);
    }

    #[test]
    fn stress_examples() {
        let s = stress(&[[0.0; 2]; 2], 1.0, 0.3, &p());
        assert_eq!(s, [[-4125.0, 0.0], [0.0, -4125.0]]);
        // Pure divergence: the viscous part tends to P/2 I and cancels the pressure.
        let s = stress(&[[1e-3, 0.0], [0.0, 1e-3]], 1.0, 0.3, &p());
        assert!(s[0][0].abs() < 1e-8 * 8250.0 && s[0][1] == 0.0);
        let g = [[1e-7, -3e-7], [2e-7, 5e-8]];
        let s = stress(&g, 0.95, 0.31, &p());
        assert_eq!(s[0][1], s[1][0]);
    }

    #[test]
    fn tau_examples() {
        assert_eq!(forcing_tau([0.1, 0.2], [0.1, 0.2], [0.0, 0.0], &p()), [0.0, 0.0]);
        let t = forcing_tau([0.0, 0.0], [0.01, 0.0], [0.0, 0.0], &p());
        assert_relative_eq!(t[0], 5.643e-4, max_relative = 1e-12);
        let t = forcing_tau([0.0, 0.0], [0.0, 0.0], [10.0, 0.0], &p());
        assert_relative_eq!(t[0], 0.156, max_relative = 1e-12);
        assert_eq!(tau_dv([0.1, 0.2], [0.1, 0.2], [1.0, -1.0], &p()), [0.0, 0.0]);
    }

    #[test]
    fn coriolis_rotates() {
        assert_eq!(coriolis([1.0, 2.0], 3.0), [-6.0, 3.0]);
    }
}
