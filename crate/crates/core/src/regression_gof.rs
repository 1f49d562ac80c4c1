//! Scanning-family machinery and the innovation transform for testing the
//! regression function: the operator K, the set-indexed process w_n, its
//! estimated variant, and the sup statistic V_n over rectangles.

use std::path::PathBuf;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::error_models::{norm_cdf, norm_pdf, norm_quantile, norm_sf};
use crate::estimation::RegressionModel;
use crate::limit_laws;
use crate::linalg;
use crate::quad;
use crate::report::TestReport;

/// How design space is ordered into a nested scanning family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanVariant {
    /// `A_z = {x : x_1 <= z}`.
    FirstCoordinate,
    /// `A_z = {x : x_1 + ... + x_p <= z}`.
    CoordinateSum,
}

/// The design distribution `H`: analytic laws carry closed-form marginals
/// and conditional slices; the empirical law is the sample itself.
#[derive(Debug, Clone)]
pub enum DesignLaw {
    /// Bivariate normal with standard marginals and correlation `r`.
    BvNormal { r: f64 },
    /// Uniform on [0, 1], p = 1.
    Unit1d,
    /// The empirical distribution of the stored sample.
    Empirical { xs: Vec<Vec<f64>> },
}

/// A scanning family: the design law plus the scan direction.
#[derive(Debug, Clone)]
pub struct ScanningFamily {
    pub design: DesignLaw,
    pub scan: ScanVariant,
}

impl ScanningFamily {
    pub fn bvn_first_coordinate(r: f64) -> Result<Self> {
        if !(r.abs() < 1.0) {
            return Err(Error::invalid(format!("|r| must be < 1, got {r}")));
        }
        Ok(ScanningFamily {
            design: DesignLaw::BvNormal { r },
            scan: ScanVariant::FirstCoordinate,
        })
    }

    pub fn unit_interval() -> Self {
        ScanningFamily {
            design: DesignLaw::Unit1d,
            scan: ScanVariant::FirstCoordinate,
        }
    }

    pub fn is_analytic(&self) -> bool {
        !matches!(self.design, DesignLaw::Empirical { .. })
    }

    pub fn dim(&self) -> usize {
        match &self.design {
            DesignLaw::BvNormal { .. } => 2,
            DesignLaw::Unit1d => 1,
            DesignLaw::Empirical { xs } => xs.first().map(|x| x.len()).unwrap_or(0),
        }
    }

    /// Scan coordinate `z(x)`.
    pub fn z_of(&self, x: &[f64]) -> f64 {
        match self.scan {
            ScanVariant::FirstCoordinate => x[0],
            ScanVariant::CoordinateSum => x.iter().sum(),
        }
    }

    /// `H(A_z)`, the marginal CDF of the scan coordinate (analytic laws).
    pub fn scan_cdf(&self, z: f64) -> Result<f64> {
        match (&self.design, self.scan) {
            (DesignLaw::BvNormal { .. }, ScanVariant::FirstCoordinate) => Ok(norm_cdf(z)),
            (DesignLaw::BvNormal { r }, ScanVariant::CoordinateSum) => {
                Ok(norm_cdf(z / (2.0 + 2.0 * r).sqrt()))
            }
            (DesignLaw::Unit1d, _) => Ok(z.clamp(0.0, 1.0)),
            (DesignLaw::Empirical { xs }, _) => {
                let n = xs.len() as f64;
                Ok(xs.iter().filter(|x| self.z_of(x) <= z).count() as f64 / n)
            }
        }
    }

    fn scan_pdf(&self, z: f64) -> Result<f64> {
        match (&self.design, self.scan) {
            (DesignLaw::BvNormal { .. }, ScanVariant::FirstCoordinate) => Ok(norm_pdf(z)),
            (DesignLaw::BvNormal { r }, ScanVariant::CoordinateSum) => {
                let s = (2.0 + 2.0 * r).sqrt();
                Ok(norm_pdf(z / s) / s)
            }
            (DesignLaw::Unit1d, _) => Ok(if (0.0..=1.0).contains(&z) { 1.0 } else { 0.0 }),
            (DesignLaw::Empirical { .. }, _) => {
                Err(Error::invalid("empirical design has no scan density"))
            }
        }
    }

    pub fn scan_quantile(&self, v: f64) -> Result<f64> {
        match (&self.design, self.scan) {
            (DesignLaw::BvNormal { .. }, ScanVariant::FirstCoordinate) => Ok(norm_quantile(v)),
            (DesignLaw::BvNormal { r }, ScanVariant::CoordinateSum) => {
                Ok(norm_quantile(v) * (2.0 + 2.0 * r).sqrt())
            }
            (DesignLaw::Unit1d, _) => Ok(v),
            (DesignLaw::Empirical { .. }, _) => {
                Err(Error::invalid("empirical design has no scan quantile"))
            }
        }
    }

    /// `E[g(X) | z(X) = u]` for analytic laws; `g` may be discontinuous.
    fn slice_expect(&self, u: f64, g: &dyn Fn(&[f64]) -> f64) -> Result<f64> {
        match (&self.design, self.scan) {
            (DesignLaw::BvNormal { r }, ScanVariant::FirstCoordinate) => {
                let sq = (1.0 - r * r).sqrt();
                let r = *r;
                Ok(quad::integrate(
                    &|w: f64| g(&[u, r * u + sq * w]) * norm_pdf(w),
                    -8.5,
                    8.5,
                    1e-11,
                ))
            }
            (DesignLaw::BvNormal { r }, ScanVariant::CoordinateSum) => {
                let sd = ((1.0 - r) / 2.0).sqrt();
                Ok(quad::integrate(
                    &|w: f64| {
                        let x1 = 0.5 * u + sd * w;
                        g(&[x1, u - x1]) * norm_pdf(w)
                    },
                    -8.5,
                    8.5,
                    1e-11,
                ))
            }
            (DesignLaw::Unit1d, _) => Ok(g(&[u])),
            (DesignLaw::Empirical { .. }, _) => {
                Err(Error::invalid("empirical design has no analytic slices"))
            }
        }
    }
}

/// A right-closed rectangle `B = (-inf, corner]`.
#[derive(Debug, Clone)]
pub struct Rect {
    pub corner: Vec<f64>,
}

/// A collection of rectangles with the scanning guard `tau`: every member
/// must satisfy `H(B cap A_{1-tau}^c) = 0`, i.e. its scan coordinate stays
/// below the `1 - tau` scan quantile.
#[derive(Debug, Clone)]
pub struct RectFamily {
    pub corners: Vec<Rect>,
    pub tau: f64,
}

impl RectFamily {
    /// Clip violating corners to the guard; returns the family and how many
    /// corners were clipped.
    pub fn clipped(corners: Vec<Rect>, tau: f64, fam: &ScanningFamily) -> Result<(Self, usize)> {
        if !(0.0..1.0).contains(&tau) {
            return Err(Error::invalid(format!("tau {tau} outside [0, 1)")));
        }
        let mut clipped = 0usize;
        let corners = if tau > 0.0 {
            let zmax = fam.scan_quantile(1.0 - tau)?;
            corners
                .into_iter()
                .map(|mut b| {
                    // only the scan-aligned coordinate is constrained by (6.4)
                    if fam.z_of(&b.corner) > zmax {
                        clipped += 1;
                        match fam.scan {
                            ScanVariant::FirstCoordinate => b.corner[0] = zmax,
                            ScanVariant::CoordinateSum => {
                                let excess = (fam.z_of(&b.corner) - zmax) / b.corner.len() as f64;
                                for c in b.corner.iter_mut() {
                                    *c -= excess;
                                }
                            }
                        }
                        b
                    } else {
                        b
                    }
                })
                .collect()
        } else {
            corners
        };
        Ok((RectFamily { corners, tau }, clipped))
    }
}

const SLICE_GUARD: f64 = 1e-9;

/// `C_{theta,z} = int_{A_z^c} grad_mu grad_mu' dH` (q x q). Analytic designs
/// integrate against `H`; the empirical design averages the sample points
/// outside `A_z`.
pub fn c_matrix(
    model: &RegressionModel,
    fam: &ScanningFamily,
    theta: &[f64],
    z: f64,
) -> Result<Vec<Vec<f64>>> {
    let q = model.q;
    match &fam.design {
        DesignLaw::Empirical { xs } => {
            let n = xs.len();
            let mut c = vec![vec![0.0; q]; q];
            let mut count = 0usize;
            for x in xs {
                if fam.z_of(x) > z {
                    let g = model.grad_mu(x, theta);
                    for i in 0..q {
                        for j in 0..q {
                            c[i][j] += g[i] * g[j];
                        }
                    }
                    count += 1;
                }
            }
            if count < q {
                return Err(Error::Singular {
                    t: fam.scan_cdf(z)?,
                    detail: format!("only {count} sample points beyond z = {z}"),
                });
            }
            for row in c.iter_mut() {
                for v in row.iter_mut() {
                    *v /= n as f64;
                }
            }
            Ok(c)
        }
        _ => {
            let v = fam.scan_cdf(z)?;
            if v > 1.0 - SLICE_GUARD {
                return Err(Error::Singular {
                    t: v,
                    detail: "scanning guard reached".into(),
                });
            }
            let hi = fam.scan_quantile(1.0 - 1e-12)?;
            let lo = z.max(fam.scan_quantile(1e-12)?);
            let mut c = vec![vec![0.0; q]; q];
            for i in 0..q {
                for j in i..q {
                    let val = quad::integrate(
                        &|u: f64| {
                            let e = fam
                                .slice_expect(u, &|x| {
                                    let g = model.grad_mu(x, theta);
                                    g[i] * g[j]
                                })
                                .unwrap_or(0.0);
                            e * fam.scan_pdf(u).unwrap_or(0.0)
                        },
                        lo,
                        hi,
                        1e-10,
                    );
                    c[i][j] = val;
                    c[j][i] = val;
                }
            }
            Ok(c)
        }
    }
}

/// Closed form of `C_z^{-1}` for the linear two-parameter model under the
/// first-coordinate scan of a bivariate normal design.
pub fn bvn_linear_c_inverse(z: f64, r: f64) -> Result<[[f64; 2]; 2]> {
    if !(r.abs() < 1.0) {
        return Err(Error::invalid(format!("|r| must be < 1, got {r}")));
    }
    let q = norm_sf(z);
    if q < 1e-300 {
        return Err(Error::Singular {
            t: 1.0 - q,
            detail: "upper tail exhausted".into(),
        });
    }
    let a = norm_pdf(z) / q;
    let za1 = z * a + 1.0;
    let s = 1.0 - r * r;
    Ok([
        [r * r / (s * q) + 1.0 / (q * za1), -r / (s * q)],
        [-r / (s * q), 1.0 / (s * q)],
    ])
}

const KGRID: usize = 2048;
const VLO: f64 = 1e-12;
const VHI: f64 = 1.0 - 1e-12;

/// Shared kernel context for a (model, family, theta): the C matrices on a
/// scan-CDF grid, built cumulatively from the full Gram matrix.
pub struct KernelCtx {
    pub fam: ScanningFamily,
    model: RegressionModel,
    theta: Vec<f64>,
    us: Vec<f64>,
    c_nodes: Vec<Vec<Vec<f64>>>,
}

impl KernelCtx {
    pub fn new(model: &RegressionModel, fam: &ScanningFamily, theta: &[f64]) -> Result<Self> {
        if !fam.is_analytic() {
            return Err(Error::invalid("kernel context requires an analytic design"));
        }
        let q = model.q;
        let mut us = Vec::with_capacity(KGRID + 1);
        for k in 0..=KGRID {
            let v = VLO + (VHI - VLO) * k as f64 / KGRID as f64;
            us.push(fam.scan_quantile(v)?);
        }
        let full = c_matrix(model, fam, theta, us[0] - 1.0)?;
        let mut c_nodes = Vec::with_capacity(KGRID + 1);
        c_nodes.push(full.clone());
        let mut acc = full;
        for w in us.windows(2) {
            // subtract the slice mass of the cell
            let mut cell = vec![vec![0.0; q]; q];
            for i in 0..q {
                for j in i..q {
                    let val = quad::integrate(
                        &|u: f64| {
                            let e = fam
                                .slice_expect(u, &|x| {
                                    let g = model.grad_mu(x, theta);
                                    g[i] * g[j]
                                })
                                .unwrap_or(0.0);
                            e * fam.scan_pdf(u).unwrap_or(0.0)
                        },
                        w[0],
                        w[1],
                        1e-12,
                    );
                    cell[i][j] = val;
                    cell[j][i] = val;
                }
            }
            for i in 0..q {
                for j in 0..q {
                    acc[i][j] -= cell[i][j];
                }
            }
            c_nodes.push(acc.clone());
        }
        Ok(KernelCtx {
            fam: fam.clone(),
            model: model.clone(),
            theta: theta.to_vec(),
            us,
            c_nodes,
        })
    }

    /// `C_u^{-1}` with entries linearly interpolated between grid nodes.
    pub fn c_inverse(&self, u: f64) -> Result<Vec<Vec<f64>>> {
        let q = self.model.q;
        let c = if u <= self.us[0] {
            self.c_nodes[0].clone()
        } else if u >= self.us[KGRID] {
            return Err(Error::Singular {
                t: self.fam.scan_cdf(u)?,
                detail: "C lookup beyond the scanning guard".into(),
            });
        } else {
            let k = self.us.partition_point(|&p| p <= u) - 1;
            let w = (u - self.us[k]) / (self.us[k + 1] - self.us[k]);
            let mut c = vec![vec![0.0; q]; q];
            for i in 0..q {
                for j in 0..q {
                    c[i][j] =
                        (1.0 - w) * self.c_nodes[k][i][j] + w * self.c_nodes[k + 1][i][j];
                }
            }
            c
        };
        linalg::invert(&c)
    }

    /// Cumulative kernel `rho_gamma(c) = int_{u <= c} E[gamma grad_mu' | u]
    /// C_u^{-1} dM(u)` evaluated at the sorted points `cs`; shared by the
    /// transform, the set-indexed process and their oracles.
    pub fn rho_cumulative(
        &self,
        gamma: &dyn Fn(&[f64]) -> f64,
        cs: &[f64],
    ) -> Result<Vec<Vec<f64>>> {
        let q = self.model.q;
        let mut out = Vec::with_capacity(cs.len());
        let mut acc = vec![0.0; q];
        let mut prev = self.us[0];
        for &c in cs {
            if c < prev {
                return Err(Error::invalid("rho evaluation points must be sorted"));
            }
            let hi = c.min(self.us[KGRID]);
            if hi > prev {
                let inc = self.rho_segment(gamma, prev, hi)?;
                for j in 0..q {
                    acc[j] += inc[j];
                }
                prev = hi;
            }
            out.push(acc.clone());
        }
        Ok(out)
    }

    fn rho_segment(
        &self,
        gamma: &dyn Fn(&[f64]) -> f64,
        lo: f64,
        hi: f64,
    ) -> Result<Vec<f64>> {
        let q = self.model.q;
        let mut out = vec![0.0; q];
        for j in 0..q {
            out[j] = quad::integrate(
                &|u: f64| {
                    let cinv = match self.c_inverse(u) {
                        Ok(c) => c,
                        Err(_) => return 0.0,
                    };
                    let mut row = 0.0;
                    for i in 0..q {
                        let e = self
                            .fam
                            .slice_expect(u, &|x| {
                                let g = self.model.grad_mu(x, &self.theta);
                                gamma(x) * g[i]
                            })
                            .unwrap_or(0.0);
                        row += e * cinv[i][j];
                    }
                    row * self.fam.scan_pdf(u).unwrap_or(0.0)
                },
                lo,
                hi,
                1e-11,
            );
        }
        Ok(out)
    }
}

/// Pointwise innovation transform
/// `K gamma(x) = gamma(x) - [int_{A_{z(x)}} gamma grad_mu' C^{-1} dH] grad_mu(x)`.
pub fn k_transform(
    model: &RegressionModel,
    fam: &ScanningFamily,
    theta: &[f64],
    gamma: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
) -> Result<f64> {
    let ctx = KernelCtx::new(model, fam, theta)?;
    k_transform_with(&ctx, gamma, x)
}

/// As [`k_transform`] with a prebuilt context.
pub fn k_transform_with(
    ctx: &KernelCtx,
    gamma: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
) -> Result<f64> {
    let c = ctx.fam.z_of(x);
    if ctx.fam.scan_cdf(c)? > 1.0 - 1e-13 {
        return Err(Error::Singular {
            t: ctx.fam.scan_cdf(c)?,
            detail: "transform point beyond the scanning guard".into(),
        });
    }
    let rho = ctx.rho_cumulative(gamma, &[c])?.pop().unwrap();
    let g = ctx.model.grad_mu(x, &ctx.theta);
    let dot: f64 = rho.iter().zip(&g).map(|(a, b)| a * b).sum();
    Ok(gamma(x) - dot)
}

/// Set-indexed transformed process
/// `w_n(B) = n^{-1/2} sum [1_B(X_i) - T 1_B(X_i)] phi(eps_i(theta_tilde))`
/// by the generic quadrature route. The kernel is evaluated at
/// `kernel_theta` when given (the true-parameter process), otherwise at
/// `theta_tilde` (the estimated process).
pub fn w_n_set(
    model: &RegressionModel,
    phi: &dyn Fn(f64) -> f64,
    fam: &ScanningFamily,
    data: &Dataset,
    theta_tilde: &[f64],
    kernel_theta: Option<&[f64]>,
    b: &Rect,
) -> Result<f64> {
    if data.n() == 0 {
        return Err(Error::invalid("empty dataset"));
    }
    let ktheta = kernel_theta.unwrap_or(theta_tilde);
    let ctx = KernelCtx::new(model, fam, ktheta)?;
    w_n_set_with(&ctx, model, phi, data, theta_tilde, b)
}

/// As [`w_n_set`] with a prebuilt kernel context (built at the kernel theta).
pub fn w_n_set_with(
    ctx: &KernelCtx,
    model: &RegressionModel,
    phi: &dyn Fn(f64) -> f64,
    data: &Dataset,
    theta_tilde: &[f64],
    b: &Rect,
) -> Result<f64> {
    let n = data.n();
    let in_b = |x: &[f64]| x.iter().zip(&b.corner).all(|(a, c)| a <= c);
    let gamma_b = |x: &[f64]| if in_b(x) { 1.0 } else { 0.0 };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        ctx.fam
            .z_of(&data.xs[i])
            .partial_cmp(&ctx.fam.z_of(&data.xs[j]))
            .unwrap()
    });
    let cs: Vec<f64> = order.iter().map(|&i| ctx.fam.z_of(&data.xs[i])).collect();
    let rhos = ctx.rho_cumulative(&gamma_b, &cs)?;
    let mut total = 0.0;
    for (k, &i) in order.iter().enumerate() {
        let x = &data.xs[i];
        let e = data.ys[i] - model.mu(x, theta_tilde);
        let g = model.grad_mu(x, &ctx.theta);
        let kernel: f64 = rhos[k].iter().zip(&g).map(|(a, b)| a * b).sum();
        total += (gamma_b(x) - kernel) * phi(e);
    }
    Ok(total / (n as f64).sqrt())
}

// ---------------------------------------------------------------------------
// Closed-form kernels for the bivariate-normal linear design
// ---------------------------------------------------------------------------

fn mills_a(y: f64) -> f64 {
    norm_pdf(y) / norm_sf(y)
}

/// Kernel integrands for the first-coordinate scan of the linear model:
/// the scanning integral reduces to two one-dimensional cumulatives
///   I1(c, x2) = int_-inf^c [y a(y) / (y a(y) + 1)] Phi((x2 - r y)/sq) dy
///   I2(c, x2) = (1/sq) int_-inf^c a(y) f((x2 - r y)/sq) dy
/// and the kernel is `X_i1 I1(c_i, x2) - (X_i2 - r X_i1) I2(c_i, x2)` with
/// `c_i = x1 ^ X_i1`.
fn i1_integrand(y: f64, x2: f64, r: f64, sq: f64) -> f64 {
    let a = mills_a(y);
    let base = y * a / (y * a + 1.0);
    if x2.is_infinite() {
        base
    } else {
        base * norm_cdf((x2 - r * y) / sq)
    }
}

fn i2_integrand(y: f64, x2: f64, r: f64, sq: f64) -> f64 {
    if x2.is_infinite() {
        return 0.0;
    }
    mills_a(y) * norm_pdf((x2 - r * y) / sq) / sq
}

const SCAN_LO: f64 = -9.0;

/// Closed-form-kernel evaluation of `w_n((-inf, x])` for the linear model
/// under the bivariate normal design (raw `phi(y) = y` weights).
pub fn gaussian_bivariate_w_n(
    data: &Dataset,
    r: f64,
    theta_tilde: &[f64],
    x: &[f64; 2],
) -> Result<f64> {
    if !(r.abs() < 1.0) {
        return Err(Error::invalid(format!("|r| must be < 1, got {r}")));
    }
    if data.p() != 2 {
        return Err(Error::invalid("bivariate kernel needs p = 2"));
    }
    let sq = (1.0 - r * r).sqrt();
    let n = data.n();
    let mut total = 0.0;
    for i in 0..n {
        let xi = &data.xs[i];
        let e = data.ys[i] - (theta_tilde[0] * xi[0] + theta_tilde[1] * xi[1]);
        let ind = if xi[0] <= x[0] && xi[1] <= x[1] { 1.0 } else { 0.0 };
        let c = x[0].min(xi[0]);
        let i1 = quad::integrate(&|y| i1_integrand(y, x[1], r, sq), SCAN_LO, c, 1e-11);
        let i2 = quad::integrate(&|y| i2_integrand(y, x[1], r, sq), SCAN_LO, c, 1e-11);
        let kernel = xi[0] * i1 - (xi[1] - r * xi[0]) * i2;
        total += (ind - kernel) * e;
    }
    Ok(total / (n as f64).sqrt())
}

/// Evaluation of the corner sup for the bivariate-normal linear design with
/// the closed-form kernel cumulatives. Returns `V_n` over the rectangle
/// corners formed from the observed coordinate pairs (inclusive and
/// just-below variants), the `x2 = +inf` column, an optional uniform
/// refinement grid, and corners clipped to the scanning guard when `tau` is
/// set.
pub struct BvnCornerMachine {
    r: f64,
    sq: f64,
    x1s: Vec<f64>,
    x2s: Vec<f64>,
    phis: Vec<f64>,
    t1: Vec<f64>,
    t2: Vec<f64>,
    n: usize,
}

impl BvnCornerMachine {
    pub fn new(data: &Dataset, r: f64, phis: &[f64]) -> Result<Self> {
        if !(r.abs() < 1.0) {
            return Err(Error::invalid(format!("|r| must be < 1, got {r}")));
        }
        if data.p() != 2 {
            return Err(Error::invalid("corner machine needs p = 2"));
        }
        let n = data.n();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| data.xs[a][0].partial_cmp(&data.xs[b][0]).unwrap());
        let x1s: Vec<f64> = order.iter().map(|&i| data.xs[i][0]).collect();
        let x2s: Vec<f64> = order.iter().map(|&i| data.xs[i][1]).collect();
        let ps: Vec<f64> = order.iter().map(|&i| phis[i]).collect();
        // suffix sums of phi * x1 and phi * (x2 - r x1)
        let mut t1 = vec![0.0; n + 1];
        let mut t2 = vec![0.0; n + 1];
        for k in (0..n).rev() {
            t1[k] = t1[k + 1] + ps[k] * x1s[k];
            t2[k] = t2[k + 1] + ps[k] * (x2s[k] - r * x1s[k]);
        }
        Ok(BvnCornerMachine {
            r,
            sq: (1.0 - r * r).sqrt(),
            x1s,
            x2s,
            phis: ps,
            t1,
            t2,
            n,
        })
    }

    /// Marching cumulatives of the two kernel integrals at the sorted
    /// positions `cs` for a fixed second coordinate.
    fn kernel_cumulatives(&self, x2: f64, cs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut i1 = Vec::with_capacity(cs.len());
        let mut i2 = Vec::with_capacity(cs.len());
        let mut a1 = 0.0;
        let mut a2 = 0.0;
        let mut prev = SCAN_LO;
        for &c in cs {
            let hi = c.max(prev);
            if hi > prev {
                let (v1, _) = quad::gk15(&|y| i1_integrand(y, x2, self.r, self.sq), prev, hi);
                let (v2, _) = quad::gk15(&|y| i2_integrand(y, x2, self.r, self.sq), prev, hi);
                a1 += v1;
                a2 += v2;
                prev = hi;
            }
            i1.push(a1);
            i2.push(a2);
        }
        (i1, i2)
    }

    /// Sup of |w_n| over the full corner set.
    pub fn corner_sup(&self, tau: Option<f64>, grid_refine: usize) -> Result<f64> {
        let n = self.n;
        let zmax = match tau {
            Some(t) if t > 0.0 => norm_quantile(1.0 - t),
            _ => f64::INFINITY,
        };
        // x1 corners: clipped data values (deduplicated) plus the guard point
        let mut corner1: Vec<f64> = Vec::with_capacity(n + 1);
        for &v in &self.x1s {
            if v <= zmax {
                corner1.push(v);
            }
        }
        if zmax.is_finite() {
            corner1.push(zmax);
        }
        if grid_refine > 0 {
            for j in 1..=grid_refine {
                let g = norm_quantile(j as f64 / (grid_refine + 1) as f64);
                if g <= zmax {
                    corner1.push(g);
                }
            }
        }
        corner1.sort_by(|a, b| a.partial_cmp(b).unwrap());
        corner1.dedup();
        let corner1_kidx: Vec<usize> = corner1
            .iter()
            .map(|&c| self.x1s.partition_point(|&v| v <= c))
            .collect();
        // x2 columns: data values with their defining index, +inf, optional grid
        let mut columns: Vec<(f64, Option<usize>)> = (0..n)
            .map(|i| (self.x2s[i], Some(i)))
            .collect();
        // map sorted-order index back to original: x2s is in x1-sorted order,
        // so the defining index is the sorted position itself
        columns.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        columns.push((f64::INFINITY, None));
        if grid_refine > 0 {
            for j in 1..=grid_refine {
                columns.push((norm_quantile(j as f64 / (grid_refine + 1) as f64), None));
            }
        }

        let mut sup: f64 = 0.0;
        for &(x2, srt_idx) in &columns {
            let (i1_pts, i2_pts) = self.kernel_cumulatives(x2, &self.x1s);
            // corner cumulatives share the marching pass by evaluating at the
            // merged sorted sequence
            let (i1_corner, i2_corner) = self.kernel_cumulatives(x2, &corner1);
            let s = self.column_sup_sorted(
                x2,
                srt_idx,
                &corner1,
                &corner1_kidx,
                &i1_pts,
                &i2_pts,
                &i1_corner,
                &i2_corner,
            );
            if s > sup {
                sup = s;
            }
        }
        Ok(sup / (n as f64).sqrt())
    }

    #[allow(clippy::too_many_arguments)]
    fn column_sup_sorted(
        &self,
        x2: f64,
        sorted_j: Option<usize>,
        corner1: &[f64],
        corner1_kidx: &[usize],
        i1_pts: &[f64],
        i2_pts: &[f64],
        i1_corner: &[f64],
        i2_corner: &[f64],
    ) -> f64 {
        // sorted_j is a position in the x1-sorted arrays
        let n = self.n;
        let mut sind = vec![0.0; n + 1];
        let mut pker = vec![0.0; n + 1];
        for k in 0..n {
            let ind2 = if self.x2s[k] <= x2 { self.phis[k] } else { 0.0 };
            sind[k + 1] = sind[k] + ind2;
            pker[k + 1] = pker[k]
                + self.phis[k]
                    * (self.x1s[k] * i1_pts[k] - (self.x2s[k] - self.r * self.x1s[k]) * i2_pts[k]);
        }
        let mut sup: f64 = 0.0;
        for (kc, (&c1, &kidx)) in corner1.iter().zip(corner1_kidx).enumerate() {
            let w = sind[kidx] - pker[kidx] - self.t1[kidx] * i1_corner[kc]
                + self.t2[kidx] * i2_corner[kc];
            let mut best = w.abs();
            let drop1 = if kidx > 0 && self.x1s[kidx - 1] == c1 {
                let k = kidx - 1;
                if self.x2s[k] <= x2 {
                    self.phis[k]
                } else {
                    0.0
                }
            } else {
                0.0
            };
            if drop1 != 0.0 {
                best = best.max((w - drop1).abs());
            }
            if let Some(pj) = sorted_j {
                if pj < kidx {
                    let drop2 = self.phis[pj];
                    best = best.max((w - drop2).abs());
                    if drop1 != 0.0 && pj != kidx - 1 {
                        best = best.max((w - drop1 - drop2).abs());
                    }
                }
            }
            if best > sup {
                sup = best;
            }
        }
        sup
    }

    /// Naive double-loop evaluation of `w_n(x)` sharing the marching kernel
    /// cumulatives; the brute-force oracle for the prefix/suffix machinery.
    pub fn w_at_naive(&self, x: &[f64; 2]) -> f64 {
        let n = self.n;
        let cs: Vec<f64> = self.x1s.iter().map(|&v| v.min(x[0])).collect();
        let mut merged = cs.clone();
        merged.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (i1m, i2m) = self.kernel_cumulatives(x[1], &merged);
        let lookup = |c: f64| -> (f64, f64) {
            let k = merged.partition_point(|&v| v < c);
            (i1m[k.min(merged.len() - 1)], i2m[k.min(merged.len() - 1)])
        };
        let mut total = 0.0;
        for k in 0..n {
            let ind = if self.x1s[k] <= x[0] && self.x2s[k] <= x[1] {
                1.0
            } else {
                0.0
            };
            let (i1, i2) = lookup(cs[k]);
            let kernel = self.x1s[k] * i1 - (self.x2s[k] - self.r * self.x1s[k]) * i2;
            total += (ind - kernel) * self.phis[k];
        }
        total / (n as f64).sqrt()
    }
}

/// Configuration of the regression goodness-of-fit statistic.
#[derive(Debug, Clone)]
pub struct RegressionGofConfig {
    /// Scanning guard for the corner set; `None` takes the sup over all data
    /// corners (the default for analytic designs, matching the unrestricted
    /// sup of the simulation studies). Empirical designs default to 0.05.
    pub tau: Option<f64>,
    /// Uniform corner refinement per axis (0 = corners only).
    pub grid_refine: usize,
    pub n_intensity: usize,
    pub m_reps: usize,
    pub grid: usize,
    pub seed: u64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for RegressionGofConfig {
    fn default() -> Self {
        RegressionGofConfig {
            tau: None,
            grid_refine: 0,
            n_intensity: 2000,
            m_reps: 5000,
            grid: 128,
            seed: 0x5eed,
            cache_dir: None,
        }
    }
}

/// The V_n statistic with its p-value: standardizes `phi` by
/// `sqrt(n^-1 sum phi(eps_i)^2)`, takes the corner sup, and reads the
/// p-value from the matching limit law (`L_r` for bivariate designs, the
/// 1-D `sup |W|` law for scalar designs).
pub fn v_n_stat(
    model: &RegressionModel,
    phi: &dyn Fn(f64) -> f64,
    fam: &ScanningFamily,
    data: &Dataset,
    theta_tilde: &[f64],
    cfg: &RegressionGofConfig,
) -> Result<TestReport> {
    let n = data.n();
    let resid: Vec<f64> = data
        .xs
        .iter()
        .zip(&data.ys)
        .map(|(x, y)| y - model.mu(x, theta_tilde))
        .collect();
    let mut phis: Vec<f64> = resid.iter().map(|&e| phi(e)).collect();
    let s2 = phis.iter().map(|p| p * p).sum::<f64>() / n as f64;
    let sigma_phi = s2.sqrt();
    if sigma_phi > 0.0 {
        for p in phis.iter_mut() {
            *p /= sigma_phi;
        }
    }
    let vn = match (&fam.design, fam.scan, model.linear_through_origin) {
        (DesignLaw::BvNormal { r }, ScanVariant::FirstCoordinate, true) => {
            let machine = BvnCornerMachine::new(data, *r, &phis)?;
            machine.corner_sup(cfg.tau, cfg.grid_refine)?
        }
        (DesignLaw::Empirical { .. }, _, _) => {
            empirical_corner_sup(model, fam, data, theta_tilde, &phis, cfg.tau.unwrap_or(0.05))?
        }
        _ => generic_corner_sup(model, fam, data, theta_tilde, &phis, cfg.tau)?,
    };
    let (p_value, copula_r) = if fam.dim() == 1 {
        (
            1.0 - limit_laws::sup_bm_cdf_series(vn.max(1e-12))?,
            None,
        )
    } else {
        let r = match &fam.design {
            DesignLaw::BvNormal { r } => *r,
            DesignLaw::Empirical { xs } => empirical_correlation(xs).clamp(-0.95, 0.95),
            DesignLaw::Unit1d => 0.0,
        };
        let law = limit_laws::l_r_cdf_cached(
            r,
            cfg.n_intensity,
            cfg.m_reps,
            cfg.grid,
            cfg.seed,
            cfg.cache_dir.as_deref(),
        )?;
        (1.0 - law.cdf(vn), Some(r))
    };
    Ok(TestReport {
        statistic: "V_n".into(),
        value: vn,
        p_value,
        theta_hat: theta_tilde.to_vec(),
        sigma_hat: Some(sigma_phi),
        n,
        seed: Some(cfg.seed),
        sign_convention: None,
        copula_r,
        path: None,
    })
}

fn empirical_correlation(xs: &[Vec<f64>]) -> f64 {
    if xs.is_empty() || xs[0].len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let m1 = xs.iter().map(|x| x[0]).sum::<f64>() / n;
    let m2 = xs.iter().map(|x| x[1]).sum::<f64>() / n;
    let mut s11 = 0.0;
    let mut s22 = 0.0;
    let mut s12 = 0.0;
    for x in xs {
        s11 += (x[0] - m1) * (x[0] - m1);
        s22 += (x[1] - m2) * (x[1] - m2);
        s12 += (x[0] - m1) * (x[1] - m2);
    }
    if s11 <= 0.0 || s22 <= 0.0 {
        0.0
    } else {
        s12 / (s11 * s22).sqrt()
    }
}

/// Generic corner sup through the quadrature kernel; O(n^2) kernel
/// evaluations, intended for small-n checks and non-closed-form designs.
fn generic_corner_sup(
    model: &RegressionModel,
    fam: &ScanningFamily,
    data: &Dataset,
    theta: &[f64],
    phis: &[f64],
    tau: Option<f64>,
) -> Result<f64> {
    let ctx = KernelCtx::new(model, fam, theta)?;
    let n = data.n();
    let p = data.p();
    let zmax = match tau {
        Some(t) if t > 0.0 => fam.scan_quantile(1.0 - t)?,
        _ => f64::INFINITY,
    };
    let mut sup: f64 = 0.0;
    let mut eval = |corner: Vec<f64>| -> Result<()> {
        let b = Rect { corner };
        let w = w_n_generic_with_phis(&ctx, model, data, theta, phis, &b)?;
        if w.abs() > sup {
            sup = w.abs();
        }
        Ok(())
    };
    if p == 1 {
        for i in 0..n {
            let mut c = data.xs[i].clone();
            if fam.z_of(&c) > zmax {
                c[0] = zmax;
            }
            eval(c)?;
        }
    } else {
        for i in 0..n {
            for j in 0..n {
                let mut corner = vec![0.0; p];
                corner[0] = data.xs[i][0];
                corner[1] = data.xs[j][1];
                if fam.z_of(&corner) > zmax {
                    match fam.scan {
                        ScanVariant::FirstCoordinate => corner[0] = zmax,
                        ScanVariant::CoordinateSum => continue,
                    }
                }
                eval(corner)?;
            }
        }
    }
    Ok(sup)
}

fn w_n_generic_with_phis(
    ctx: &KernelCtx,
    model: &RegressionModel,
    data: &Dataset,
    theta: &[f64],
    phis: &[f64],
    b: &Rect,
) -> Result<f64> {
    let n = data.n();
    let in_b = |x: &[f64]| x.iter().zip(&b.corner).all(|(a, c)| a <= c);
    let gamma_b = |x: &[f64]| if in_b(x) { 1.0 } else { 0.0 };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        ctx.fam
            .z_of(&data.xs[i])
            .partial_cmp(&ctx.fam.z_of(&data.xs[j]))
            .unwrap()
    });
    let cs: Vec<f64> = order.iter().map(|&i| ctx.fam.z_of(&data.xs[i])).collect();
    let rhos = ctx.rho_cumulative(&gamma_b, &cs)?;
    let mut total = 0.0;
    for (k, &i) in order.iter().enumerate() {
        let x = &data.xs[i];
        let g = model.grad_mu(x, theta);
        let kernel: f64 = rhos[k].iter().zip(&g).map(|(a, b)| a * b).sum();
        total += (gamma_b(x) - kernel) * phis[i];
    }
    Ok(total / (n as f64).sqrt())
}

/// Corner sup under the empirical design: the kernel integral is the
/// plug-in sum over sample points, with ranks beyond `1 - tau` excluded
/// from the C matrices.
fn empirical_corner_sup(
    model: &RegressionModel,
    fam: &ScanningFamily,
    data: &Dataset,
    theta: &[f64],
    phis: &[f64],
    tau: f64,
) -> Result<f64> {
    let n = data.n();
    let q = model.q;
    let p = data.p();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        fam.z_of(&data.xs[i])
            .partial_cmp(&fam.z_of(&data.xs[j]))
            .unwrap()
    });
    let grads: Vec<Vec<f64>> = (0..n).map(|i| model.grad_mu(&data.xs[i], theta)).collect();
    // suffix Gram matrices along the scan order
    let mut cinvs: Vec<Option<Vec<Vec<f64>>>> = vec![None; n];
    let mut suffix = vec![vec![0.0; q]; q];
    for k in (0..n).rev() {
        let g = &grads[order[k]];
        for a in 0..q {
            for b in 0..q {
                suffix[a][b] += g[a] * g[b] / n as f64;
            }
        }
        // C at the k-th order point excludes points up to and including it:
        // suffix currently includes k, so C_{z_k} is the suffix without it
    }
    // rebuild: C after removing prefix 0..=k
    let mut csum = vec![vec![0.0; q]; q];
    for k in 0..n {
        let g = &grads[order[k]];
        for a in 0..q {
            for b in 0..q {
                csum[a][b] += g[a] * g[b] / n as f64;
            }
        }
        let rank_frac = (k + 1) as f64 / n as f64;
        if rank_frac <= 1.0 - tau {
            let mut c = vec![vec![0.0; q]; q];
            for a in 0..q {
                for b in 0..q {
                    c[a][b] = suffix[a][b] - csum[a][b];
                }
            }
            cinvs[k] = linalg::invert(&c).ok();
        }
    }
    // corner set: coordinate pairs, clipped by the empirical guard rank
    let kmax = ((1.0 - tau) * n as f64).floor() as usize;
    let mut sup: f64 = 0.0;
    let corners: Vec<Vec<f64>> = if p == 1 {
        (0..n).map(|i| data.xs[i].clone()).collect()
    } else {
        let mut v = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let mut c = vec![f64::INFINITY; p];
                c[0] = data.xs[i][0];
                c[1] = data.xs[j][1];
                v.push(c);
            }
        }
        v
    };
    for corner in corners {
        // kernel coefficient rho(c) = n^-1 sum_{rank(j) <= cut} 1_B(X_j) g_j' C_j^-1
        let in_b = |x: &[f64]| x.iter().zip(&corner).all(|(a, c)| a <= c);
        let cut = {
            let zc = fam.z_of(&corner);
            let mut cut = order.partition_point(|&i| fam.z_of(&data.xs[i]) <= zc);
            if cut > kmax {
                cut = kmax;
            }
            cut
        };
        let mut w = 0.0;
        // rho accumulated along the scan order once per corner: O(n q^2)
        let mut rho = vec![0.0; q];
        let mut rhos = vec![vec![0.0; q]; n + 1];
        for k in 0..cut {
            let jorig = order[k];
            if in_b(&data.xs[jorig]) {
                if let Some(cinv) = &cinvs[k] {
                    let g = &grads[jorig];
                    for b in 0..q {
                        let mut dot = 0.0;
                        for a in 0..q {
                            dot += g[a] * cinv[a][b];
                        }
                        rho[b] += dot / n as f64;
                    }
                }
            }
            rhos[k + 1] = rho.clone();
        }
        for k in cut..n {
            rhos[k + 1] = rho.clone();
        }
        for (k, &i) in order.iter().enumerate() {
            let upto = (k + 1).min(cut);
            let g = &grads[i];
            let kernel: f64 = rhos[upto].iter().zip(g).map(|(a, b)| a * b).sum();
            let ind = if in_b(&data.xs[i]) { 1.0 } else { 0.0 };
            w += (ind - kernel) * phis[i];
        }
        let w = w / (n as f64).sqrt();
        if w.abs() > sup {
            sup = w.abs();
        }
    }
    Ok(sup)
}
