//! Largest eigenvalue of small symmetric matrices, in closed form.
//!
//! Dimensions 1-3 only, matching the torus dimensions. Inputs use the
//! upper-triangle component layout of [`super::SymTensorField`]:
//!
//! ```text
//! dim 1: [a00]
//! dim 2: [a00, a01, a11]
//! dim 3: [a00, a01, a02, a11, a12, a22]
//! ```
//!
//! The 3x3 case uses the trigonometric solution of the characteristic cubic
//! of the deviatoric part, with a guard for (near-)spherical tensors where
//! that parametrization degenerates.

/// Largest eigenvalue of a symmetric `dim x dim` matrix given in
/// upper-triangle order. `dim` must be 1, 2 or 3.
pub fn lambda_max(dim: usize, a: &[f64; 6]) -> f64 {
    match dim {
        1 => a[0],
        2 => {
            let (a00, a01, a11) = (a[0], a[1], a[2]);
            let half_trace = 0.5 * (a00 + a11);
            let half_gap = 0.5 * (a00 - a11);
            half_trace + (half_gap * half_gap + a01 * a01).sqrt()
        }
        3 => {
            let (a00, a01, a02, a11, a12, a22) = (a[0], a[1], a[2], a[3], a[4], a[5]);
            let q = (a00 + a11 + a22) / 3.0;
            let off = a01 * a01 + a02 * a02 + a12 * a12;
            let p2 = (a00 - q) * (a00 - q)
                + (a11 - q) * (a11 - q)
                + (a22 - q) * (a22 - q)
                + 2.0 * off;
            if p2 <= 0.0 {
                // Spherical tensor: all eigenvalues equal the mean.
                return q;
            }
            let p = (p2 / 6.0).sqrt();
            // B = (A - q I) / p; r = det(B) / 2 lies in [-1, 1] up to roundoff.
            let b00 = (a00 - q) / p;
            let b11 = (a11 - q) / p;
            let b22 = (a22 - q) / p;
            let b01 = a01 / p;
            let b02 = a02 / p;
            let b12 = a12 / p;
            let det_b = b00 * (b11 * b22 - b12 * b12) - b01 * (b01 * b22 - b12 * b02)
                + b02 * (b01 * b12 - b11 * b02);
            let r = (det_b / 2.0).clamp(-1.0, 1.0);
            let phi = r.acos() / 3.0;
            q + 2.0 * p * phi.cos()
        }
        _ => panic!("lambda_max supports dim 1..=3, got {dim}"),
    }
}

/// Upper-triangle components of the outer product `w (x) w / denom`.
pub fn scaled_outer_product(dim: usize, w: &[f64; 3], denom: f64) -> [f64; 6] {
    let mut out = [0.0; 6];
    let mut c = 0;
    for i in 0..dim {
        for j in i..dim {
            out[c] = w[i] * w[j] / denom;
            c += 1;
        }
    }
    out
}
