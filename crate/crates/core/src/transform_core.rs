//! Γ-matrix machinery and the martingale transforms acting on index
//! functions: the 2x2 location case and the 3x3 location-scale case, the
//! cumulative vector integrals G and J they induce, and the pointwise
//! transform.
//!
//! The Γ matrix is singular at t = 1, so evaluation is refused beyond
//! `1 - T_GUARD`. Process paths are constant beyond the largest residual,
//! which keeps the guard out of the way in practice.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::error_models::{norm_pdf, norm_sf, ErrorModel};
use crate::linalg::{inv2, inv3};
use crate::quad;

/// Γ_t evaluation is refused for t > 1 - T_GUARD.
pub const T_GUARD: f64 = 1e-6;
/// Determinant floor below which Γ_t is treated as singular.
pub const DET_FLOOR: f64 = 1e-12;

const T_LO: f64 = 1e-12;
const GRID_CELLS: usize = 2048;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The 2x2 tail Gram matrix of the extended score,
/// `Γ_t = int_{z >= F^-1(t)} h h^T dF`.
#[derive(Debug, Clone, Copy)]
pub struct GammaMatrix {
    pub t: f64,
    pub entries: [[f64; 2]; 2],
}

impl GammaMatrix {
    pub fn det(&self) -> f64 {
        self.entries[0][0] * self.entries[1][1] - self.entries[0][1] * self.entries[1][0]
    }
}

/// The 3x3 location-scale analogue.
#[derive(Debug, Clone, Copy)]
pub struct GammaScaleMatrix {
    pub t: f64,
    pub sigma: f64,
    pub entries: [[f64; 3]; 3],
}

fn check_guard(t: f64) -> Result<()> {
    if !(0.0..=1.0 - T_GUARD).contains(&t) {
        return Err(Error::Singular {
            t,
            detail: format!("t outside [0, {}]", 1.0 - T_GUARD),
        });
    }
    Ok(())
}

/// Gaussian closed form for Γ_t at y = Φ^-1(t):
/// `[[1-t, -f(y)], [-f(y), y f(y) + 1 - t]]`.
fn gamma_gaussian(t: f64, y: f64) -> [[f64; 2]; 2] {
    let f = norm_pdf(y);
    let q = 1.0 - t;
    [[q, -f], [-f, y * f + q]]
}

/// Γ_t by quadrature for a generic model. The (1,2) entry uses
/// `int_y^inf psi dF = -f(y)`, valid for models with vanishing density tails.
fn gamma_generic(model: &ErrorModel, t: f64, y: f64) -> [[f64; 2]; 2] {
    let (_, hi) = model.support_range();
    let m2 = quad::integrate(
        &|z| {
            let s = model.score(z);
            s * s * model.pdf(z)
        },
        y,
        hi,
        1e-10,
    );
    [[1.0 - t, -model.pdf(y)], [-model.pdf(y), m2]]
}

/// `Γ_t` as a matrix, with the Gaussian closed form when available.
pub fn gamma_matrix(model: &ErrorModel, t: f64) -> Result<GammaMatrix> {
    check_guard(t)?;
    let y = model.quantile(t.max(T_LO));
    let entries = if model.is_gaussian() {
        gamma_gaussian(t, y)
    } else {
        gamma_generic(model, t, y)
    };
    Ok(GammaMatrix { t, entries })
}

/// Exact 2x2 inverse of `Γ_t`. The Gaussian path uses the closed form
/// `[[1 + y a, a], [a, 1]] / ((1 - t)(y a + 1 - a^2))` with
/// `a(y) = f(y) / (1 - F(y))`; the generic path inverts the quadrature
/// matrix. Fails with a singularity error when the determinant falls below
/// `DET_FLOOR`.
pub fn gamma_inverse(model: &ErrorModel, t: f64) -> Result<[[f64; 2]; 2]> {
    check_guard(t)?;
    let y = model.quantile(t.max(T_LO));
    if model.is_gaussian() {
        let q = 1.0 - t;
        let a = norm_pdf(y) / q;
        let d = y * a + 1.0 - a * a;
        let det = q * q * d;
        if det < DET_FLOOR {
            return Err(Error::Singular {
                t,
                detail: format!("det = {det:.3e} below floor"),
            });
        }
        let s = 1.0 / (q * d);
        return Ok([[(1.0 + y * a) * s, a * s], [a * s, s]]);
    }
    let g = gamma_generic(model, t, y);
    let (det, inv) = inv2(g);
    if det < DET_FLOOR {
        return Err(Error::Singular {
            t,
            detail: format!("det = {det:.3e} below floor"),
        });
    }
    Ok(inv)
}

/// Scaled-coordinate (sigma = 1) 3x3 Γ for the Gaussian model at
/// y = Φ^-1(t). Derived from the tail moments of (1, -y, 1 - y^2).
fn gamma3_gaussian(t: f64, y: f64) -> [[f64; 3]; 3] {
    let f = norm_pdf(y);
    let q = 1.0 - t;
    let m2 = y * f + q;
    [
        [q, -f, -y * f],
        [-f, m2, (y * y + 1.0) * f],
        [-y * f, (y * y + 1.0) * f, 2.0 * q + (y * y * y + y) * f],
    ]
}

/// Generic 3x3 Γ on the scaled coordinate via tail quadrature.
fn gamma3_generic(model: &ErrorModel, t: f64, y: f64) -> [[f64; 3]; 3] {
    let (_, hi) = model.support_range();
    let moments = quad::integrate_vec(
        &|z: f64| {
            let s = model.score(z);
            let qdot = s;
            let qsdot = 1.0 + z * s;
            let f = model.pdf(z);
            [qdot * qdot * f, qdot * qsdot * f, qsdot * qsdot * f]
        },
        y,
        hi,
        1e-10,
    );
    let f = model.pdf(y);
    [
        [1.0 - t, -f, -y * f],
        [-f, moments[0], moments[1]],
        [-y * f, moments[1], moments[2]],
    ]
}

fn gamma3(model: &ErrorModel, t: f64, y: f64) -> [[f64; 3]; 3] {
    if model.is_gaussian() {
        gamma3_gaussian(t, y)
    } else {
        gamma3_generic(model, t, y)
    }
}

/// The 3x3 location-scale matrix `Γ_{σ,t}`. It equals `D Γ~_t D` where
/// `Γ~_t` is the sigma = 1 matrix on the scaled coordinate and
/// `D = diag(1, 1/σ, 1/σ)`.
pub fn gamma_matrix_scale(model: &ErrorModel, t: f64, sigma: f64) -> Result<GammaScaleMatrix> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    check_guard(t)?;
    let y = model.quantile(t.max(T_LO));
    let g = gamma3(model, t, y);
    let d = [1.0, 1.0 / sigma, 1.0 / sigma];
    let mut entries = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            entries[i][j] = d[i] * g[i][j] * d[j];
        }
    }
    Ok(GammaScaleMatrix { t, sigma, entries })
}

/// Integrand of the cumulative G on the Gaussian model:
/// `Γ^-1 h f` reduces to `(a, a(a - y)) / (y a + 1 - a^2)` with
/// `a = f / (1 - Φ)`. Stays finite far beyond the guard, which the
/// isometry checks exploit.
pub fn gaussian_g_integrand(y: f64) -> [f64; 2] {
    let a = norm_pdf(y) / norm_sf(y);
    let d = y * a + 1.0 - a * a;
    [a / d, a * (a - y) / d]
}

/// Scaled-coordinate 3-dim integrand `Γ~^-1 h~ f` for the Gaussian model.
pub fn gaussian_g3_integrand(y: f64) -> [f64; 3] {
    let t = 1.0 - norm_sf(y);
    let g = gamma3_gaussian(t, y);
    let (_, inv) = inv3(g);
    let h = [1.0, -y, 1.0 - y * y];
    let f = norm_pdf(y);
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = (inv[i][0] * h[0] + inv[i][1] * h[1] + inv[i][2] * h[2]) * f;
    }
    out
}

fn generic_g_integrand(model: &ErrorModel, y: f64) -> [f64; 2] {
    let t = model.cdf(y);
    let g = gamma_generic(model, t, y);
    let (_, inv) = inv2(g);
    let h = [1.0, model.score(y)];
    let f = model.pdf(y);
    [
        (inv[0][0] * h[0] + inv[0][1] * h[1]) * f,
        (inv[1][0] * h[0] + inv[1][1] * h[1]) * f,
    ]
}

fn generic_g3_integrand(model: &ErrorModel, y: f64) -> [f64; 3] {
    let t = model.cdf(y);
    let g = gamma3_generic(model, t, y);
    let (_, inv) = inv3(g);
    let s = model.score(y);
    let h = [1.0, s, 1.0 + y * s];
    let f = model.pdf(y);
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = (inv[i][0] * h[0] + inv[i][1] * h[1] + inv[i][2] * h[2]) * f;
    }
    out
}

/// A cumulative vector integral `z -> int_{y <= z} integrand(y) dy`, cached
/// on a grid uniform in t-space with exact local refinement at the requested
/// point. This is the shared cache behind G and J lookups; all process
/// implementations and their brute-force oracles evaluate through the same
/// `eval`, so they agree to rounding.
pub struct VectorIntegral<const D: usize> {
    zs: Vec<f64>,
    cum: Vec<[f64; D]>,
    integrand: Arc<dyn Fn(f64) -> [f64; D] + Send + Sync>,
    pub z_lo: f64,
    pub z_hi: f64,
}

impl<const D: usize> VectorIntegral<D> {
    fn build(
        model: &ErrorModel,
        integrand: Arc<dyn Fn(f64) -> [f64; D] + Send + Sync>,
    ) -> Self {
        let mut zs = Vec::with_capacity(GRID_CELLS + 1);
        for k in 0..=GRID_CELLS {
            let t = T_LO + (1.0 - T_GUARD - T_LO) * k as f64 / GRID_CELLS as f64;
            zs.push(model.quantile(t));
        }
        let mut cum = Vec::with_capacity(GRID_CELLS + 1);
        let mut acc = [0.0; D];
        cum.push(acc);
        for w in zs.windows(2) {
            let inc = quad::integrate_vec(integrand.as_ref(), w[0], w[1], 1e-12);
            for d in 0..D {
                acc[d] += inc[d];
            }
            cum.push(acc);
        }
        let z_lo = zs[0];
        let z_hi = zs[GRID_CELLS];
        VectorIntegral {
            zs,
            cum,
            integrand,
            z_lo,
            z_hi,
        }
    }

    /// Cumulative value at `z`: nearest lower grid node plus one exact
    /// Gauss–Kronrod panel over the remainder.
    pub fn eval(&self, z: f64) -> Result<[f64; D]> {
        if z <= self.z_lo {
            return Ok([0.0; D]);
        }
        if z > self.z_hi {
            return Err(Error::Singular {
                t: f64::NAN,
                detail: format!("lookup at z = {z} beyond the guard {}", self.z_hi),
            });
        }
        let k = match self
            .zs
            .binary_search_by(|p| p.partial_cmp(&z).unwrap())
        {
            Ok(i) => return Ok(self.cum[i]),
            Err(i) => i - 1,
        };
        let (panel, _) = quad::gk15_vec(self.integrand.as_ref(), self.zs[k], z);
        let mut out = self.cum[k];
        for d in 0..D {
            out[d] += panel[d];
        }
        Ok(out)
    }
}

impl VectorIntegral<2> {
    /// Cache of `G(z) = int_{y <= z} Γ_{F(y)}^-1 h(y) dF(y)`.
    pub fn new_g(model: &ErrorModel) -> Self {
        let integrand: Arc<dyn Fn(f64) -> [f64; 2] + Send + Sync> = if model.is_gaussian() {
            Arc::new(gaussian_g_integrand)
        } else {
            let m = model.clone();
            Arc::new(move |y| generic_g_integrand(&m, y))
        };
        Self::build(model, integrand)
    }

    /// Cache of `J(z) = int_{y <= z} phi(y) Γ_{F(y)}^-1 h(y) dF(y)`.
    pub fn new_j(model: &ErrorModel, phi: ScalarFn) -> Self {
        let base: Arc<dyn Fn(f64) -> [f64; 2] + Send + Sync> = if model.is_gaussian() {
            Arc::new(gaussian_g_integrand)
        } else {
            let m = model.clone();
            Arc::new(move |y| generic_g_integrand(&m, y))
        };
        let integrand = Arc::new(move |y: f64| {
            let g = base(y);
            let p = phi(y);
            [p * g[0], p * g[1]]
        });
        Self::build(model, integrand)
    }
}

impl VectorIntegral<3> {
    /// Scaled-coordinate 3-dim G cache for the location-scale transform.
    pub fn new_g3(model: &ErrorModel) -> Self {
        let integrand: Arc<dyn Fn(f64) -> [f64; 3] + Send + Sync> = if model.is_gaussian() {
            Arc::new(gaussian_g3_integrand)
        } else {
            let m = model.clone();
            Arc::new(move |y| generic_g3_integrand(&m, y))
        };
        Self::build(model, integrand)
    }

    /// Scaled-coordinate 3-dim J cache with weight `phi`.
    pub fn new_j3(model: &ErrorModel, phi: ScalarFn) -> Self {
        let base: Arc<dyn Fn(f64) -> [f64; 3] + Send + Sync> = if model.is_gaussian() {
            Arc::new(gaussian_g3_integrand)
        } else {
            let m = model.clone();
            Arc::new(move |y| generic_g3_integrand(&m, y))
        };
        let integrand = Arc::new(move |y: f64| {
            let g = base(y);
            let p = phi(y);
            [p * g[0], p * g[1], p * g[2]]
        });
        Self::build(model, integrand)
    }
}

/// `G(z)` by direct adaptive quadrature (no cache); the independent route
/// against which cached lookups are tested.
pub fn g_vector(model: &ErrorModel, z: f64) -> Result<[f64; 2]> {
    let lo = model.quantile(T_LO);
    if z <= lo {
        return Ok([0.0; 2]);
    }
    let hi = model.quantile(1.0 - T_GUARD);
    if z > hi {
        return Err(Error::Singular {
            t: model.cdf(z),
            detail: "G evaluation beyond the guard".into(),
        });
    }
    if model.is_gaussian() {
        Ok(quad::integrate_vec(&gaussian_g_integrand, lo, z, 1e-11))
    } else {
        let m = model.clone();
        Ok(quad::integrate_vec(
            &move |y| generic_g_integrand(&m, y),
            lo,
            z,
            1e-11,
        ))
    }
}

/// `J(z)` by direct adaptive quadrature with weight `phi`.
pub fn j_vector(model: &ErrorModel, phi: &dyn Fn(f64) -> f64, z: f64) -> Result<[f64; 2]> {
    let lo = model.quantile(T_LO);
    if z <= lo {
        return Ok([0.0; 2]);
    }
    let hi = model.quantile(1.0 - T_GUARD);
    if z > hi {
        return Err(Error::Singular {
            t: model.cdf(z),
            detail: "J evaluation beyond the guard".into(),
        });
    }
    if model.is_gaussian() {
        Ok(quad::integrate_vec(
            &|y| {
                let g = gaussian_g_integrand(y);
                let p = phi(y);
                [p * g[0], p * g[1]]
            },
            lo,
            z,
            1e-11,
        ))
    } else {
        let m = model.clone();
        Ok(quad::integrate_vec(
            &move |y| {
                let g = generic_g_integrand(&m, y);
                let p = phi(y);
                [p * g[0], p * g[1]]
            },
            lo,
            z,
            1e-11,
        ))
    }
}

/// Pointwise martingale transform
/// `L phi(y) = phi(y) - [int_{z <= y} phi h^T Γ^-1 dF] h(y)`.
pub fn transform_l(model: &ErrorModel, phi: &dyn Fn(f64) -> f64, y: f64) -> Result<f64> {
    let v = j_vector(model, phi, y)?;
    let h = [1.0, model.score(y)];
    Ok(phi(y) - (v[0] * h[0] + v[1] * h[1]))
}

/// Location-scale transform on the scaled coordinate. The sigma-dependent
/// prefactors of `h_σ` and `Γ_σ` cancel identically, so after passing to the
/// scaled residual the transform itself is free of sigma; the parameter is
/// validated and otherwise only documents the caller's scale.
pub fn transform_l_scale(
    model: &ErrorModel,
    phi: &dyn Fn(f64) -> f64,
    sigma: f64,
    y: f64,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let lo = model.quantile(T_LO);
    if y <= lo {
        return Ok(phi(y));
    }
    let hi = model.quantile(1.0 - T_GUARD);
    if y > hi {
        return Err(Error::Singular {
            t: model.cdf(y),
            detail: "transform evaluation beyond the guard".into(),
        });
    }
    let v: [f64; 3] = if model.is_gaussian() {
        quad::integrate_vec(
            &|z| {
                let g = gaussian_g3_integrand(z);
                let p = phi(z);
                [p * g[0], p * g[1], p * g[2]]
            },
            lo,
            y,
            1e-11,
        )
    } else {
        let m = model.clone();
        quad::integrate_vec(
            &move |z| {
                let g = generic_g3_integrand(&m, z);
                let p = phi(z);
                [p * g[0], p * g[1], p * g[2]]
            },
            lo,
            y,
            1e-11,
        )
    };
    let s = model.score(y);
    let h = [1.0, s, 1.0 + y * s];
    Ok(phi(y) - (v[0] * h[0] + v[1] * h[1] + v[2] * h[2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error_models::{gaussian_model, norm_cdf};

    #[test]
    fn gamma_at_zero_is_identity_scaled() {
        let m = gaussian_model();
        let g = gamma_matrix(&m, 0.0).unwrap();
        assert!((g.entries[0][0] - 1.0).abs() < 1e-9);
        assert!(g.entries[0][1].abs() < 1e-9);
        assert!((g.entries[1][1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn gamma_at_half() {
        let m = gaussian_model();
        let g = gamma_matrix(&m, 0.5).unwrap();
        assert!((g.entries[0][0] - 0.5).abs() < 1e-12);
        assert!((g.entries[0][1] + 0.3989423).abs() < 1e-7);
        assert!((g.entries[1][1] - 0.5).abs() < 1e-9);
        // det = 1/4 - 1/(2 pi)
        let det_expect = 0.25 - 1.0 / (2.0 * std::f64::consts::PI);
        assert!((g.det() - det_expect).abs() < 1e-9);
        assert!((g.det() - 0.090845).abs() < 1e-6);
    }

    #[test]
    fn gamma_inverse_matches_direct_inversion() {
        let m = gaussian_model();
        let inv = gamma_inverse(&m, 0.5).unwrap();
        assert!((inv[0][0] - 5.5039).abs() < 1e-3);
        assert!((inv[0][1] - 4.3915).abs() < 1e-3);
        assert!((inv[1][1] - 5.5039).abs() < 1e-3);
        let id = gamma_inverse(&m, 0.0).unwrap();
        assert!((id[0][0] - 1.0).abs() < 1e-7);
        assert!(id[0][1].abs() < 1e-7);
        assert!((id[1][1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn gamma_inverse_guard() {
        let m = gaussian_model();
        assert!(gamma_inverse(&m, 1.0 - 1e-9).is_err());
        assert!(gamma_inverse(&m, -0.1).is_err());
    }

    #[test]
    fn closed_form_vs_quadrature_inverse() {
        let m = gaussian_model();
        // generic path on a Gaussian built via from_parts (no closed forms)
        let generic = ErrorModel::from_parts(norm_pdf, norm_cdf, |y| -y, None);
        for k in 1..=9 {
            let t = 0.1 * k as f64;
            let a = gamma_inverse(&m, t).unwrap();
            let b = gamma_inverse(&generic, t).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let denom = a[i][j].abs().max(1.0);
                    assert!(
                        ((a[i][j] - b[i][j]) / denom).abs() < 1e-6,
                        "t={t} [{i}][{j}]: {} vs {}",
                        a[i][j],
                        b[i][j]
                    );
                }
            }
        }
    }

    #[test]
    fn gamma_scale_examples() {
        let m = gaussian_model();
        let g = gamma_matrix_scale(&m, 0.5, 1.0).unwrap();
        assert!(g.entries[0][2].abs() < 1e-12, "q_sigma(0.5) = 0 at y = 0");
        let g0 = gamma_matrix_scale(&m, 0.0, 1.0).unwrap();
        assert!((g0.entries[0][0] - 1.0).abs() < 1e-9);
        assert!(g0.entries[0][1].abs() < 1e-9);
        assert!(gamma_matrix_scale(&m, 0.5, -1.0).is_err());
    }

    #[test]
    fn gamma_scale_quarter_frozen() {
        // brute-force tail quadrature oracle values (sigma = 1, t = 0.25)
        let m = gaussian_model();
        let g = gamma_matrix_scale(&m, 0.25, 1.0).unwrap();
        let expect = [
            [0.75, -0.317776572684107, 0.2143370411278703],
            [-0.317776572684107, 0.5356629588721297, 0.4623447100122115],
            [0.2143370411278703, 0.4623447100122115, 1.1881532320393835],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (g.entries[i][j] - expect[i][j]).abs() < 1e-8,
                    "[{i}][{j}]: {} vs {}",
                    g.entries[i][j],
                    expect[i][j]
                );
            }
        }
    }

    #[test]
    fn gamma_scale_conjugation() {
        let m = gaussian_model();
        let g1 = gamma_matrix_scale(&m, 0.3, 1.0).unwrap();
        let g2 = gamma_matrix_scale(&m, 0.3, 2.0).unwrap();
        let d = [1.0, 0.5, 0.5];
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (g2.entries[i][j] - d[i] * g1.entries[i][j] * d[j]).abs() < 1e-12
                );
            }
        }
    }

    #[test]
    fn g_vector_values() {
        let m = gaussian_model();
        let tail = g_vector(&m, -8.0).unwrap();
        assert!(tail[0].abs() < 1e-8 && tail[1].abs() < 1e-8);
        // independently computed reference (adaptive quadrature oracle)
        let g0 = g_vector(&m, 0.0).unwrap();
        assert!((g0[0] - 1.3702527283224495).abs() < 1e-7, "{}", g0[0]);
        assert!((g0[1] - 1.4691873167273077).abs() < 1e-7, "{}", g0[1]);
        let g1 = g_vector(&m, 1.0).unwrap();
        assert!((g1[0] - 5.8458446190624995).abs() < 2e-7);
        assert!((g1[1] - 4.248103064232107).abs() < 2e-7);
    }

    #[test]
    fn j_vector_values() {
        let m = gaussian_model();
        // phi == 1 reduces J to G
        for z in [-1.0, 0.0, 1.5] {
            let g = g_vector(&m, z).unwrap();
            let j = j_vector(&m, &|_| 1.0, z).unwrap();
            assert!((g[0] - j[0]).abs() < 1e-10 && (g[1] - j[1]).abs() < 1e-10);
        }
        let j = j_vector(&m, &|y| y, -8.0).unwrap();
        assert!(j[0].abs() < 1e-8 && j[1].abs() < 1e-8);
        let j0 = j_vector(&m, &|y| y, 0.0).unwrap();
        assert!((j0[0] - -0.7637222873490935).abs() < 1e-7, "{}", j0[0]);
        assert!((j0[1] - -1.0283471666746955).abs() < 1e-7, "{}", j0[1]);
    }

    #[test]
    fn cache_matches_direct_route() {
        let m = gaussian_model();
        let cache = VectorIntegral::new_g(&m);
        for k in 1..50 {
            let t = k as f64 / 51.0;
            let z = m.quantile(t);
            let a = cache.eval(z).unwrap();
            let b = g_vector(&m, z).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn generic_g_matches_gaussian_closed_form() {
        let m = gaussian_model();
        let generic = ErrorModel::from_parts(norm_pdf, norm_cdf, |y| -y, None);
        for k in 1..=50 {
            let t = k as f64 * 0.98 / 50.0;
            let z = m.quantile(t);
            let a = g_vector(&m, z).unwrap();
            let b = g_vector(&generic, z).unwrap();
            for d in 0..2 {
                let denom = a[d].abs().max(1.0);
                assert!(
                    ((a[d] - b[d]) / denom).abs() < 1e-6,
                    "t={t} comp {d}: {} vs {}",
                    a[d],
                    b[d]
                );
            }
        }
    }

    #[test]
    fn transform_l_limits_and_value() {
        let m = gaussian_model();
        // deep lower tail: integral term vanishes
        let phi = |y: f64| y * y;
        let v = transform_l(&m, &phi, -8.5).unwrap();
        assert!((v - 72.25).abs() < 1e-6);
        // frozen reference: L[1{y<=0}](1) = G2(0) - G1(0)
        let ind = |y: f64| if y <= 0.0 { 1.0 } else { 0.0 };
        let v = transform_l(&m, &ind, 1.0).unwrap();
        assert!((v - 0.0989345884048582).abs() < 1e-7, "{v}");
    }

    #[test]
    fn transform_l_scale_value() {
        let m = gaussian_model();
        let ind = |y: f64| if y <= 0.0 { 1.0 } else { 0.0 };
        let v = transform_l_scale(&m, &ind, 1.0, 1.0).unwrap();
        // frozen: -(G3_1(0) - G3_2(0)) with the 3-dim quadrature oracle
        assert!((v - 0.9503196799058786).abs() < 1e-7, "{v}");
        let deep = transform_l_scale(&m, &ind, 1.0, -8.5).unwrap();
        assert!((deep - 1.0).abs() < 1e-8);
        assert!(transform_l_scale(&m, &ind, 0.0, 0.0).is_err());
    }

    #[test]
    fn g3_cache_consistency() {
        let m = gaussian_model();
        let cache = VectorIntegral::new_g3(&m);
        let v = cache.eval(0.0).unwrap();
        assert!((v[0] - 3.244415837484423).abs() < 1e-7, "{}", v[0]);
        assert!((v[1] - 4.1947355173903).abs() < 1e-7, "{}", v[1]);
        assert!((v[2] - -1.8833411075007056).abs() < 1e-7, "{}", v[2]);
    }
}
