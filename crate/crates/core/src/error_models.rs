//! The null error distribution `F`, its score machinery, and the indexing
//! families `phi_t` used by the transformed processes.

use std::sync::{Arc, OnceLock};

use statrs::function::erf;

use crate::error::{Error, Result};
use crate::quad;
use crate::rng::SeedStream;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub(crate) const SQRT_2: f64 = std::f64::consts::SQRT_2;
pub(crate) const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// Standard normal density.
pub fn norm_pdf(y: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * y * y).exp()
}

/// Standard normal distribution function, accurate in both tails.
pub fn norm_cdf(y: f64) -> f64 {
    0.5 * erf::erfc(-y / SQRT_2)
}

/// Upper tail 1 - Phi(y) without cancellation.
pub fn norm_sf(y: f64) -> f64 {
    0.5 * erf::erfc(y / SQRT_2)
}

/// Standard normal quantile.
pub fn norm_quantile(u: f64) -> f64 {
    -SQRT_2 * erf::erfc_inv(2.0 * u)
}

/// A null error law `F` with density `f`, quantile, score `psi_f = f'/f` and
/// an inverse-CDF sampler. The Gaussian model carries closed forms; custom
/// models are built from user-supplied closures.
#[derive(Clone)]
pub struct ErrorModel {
    gaussian: bool,
    pdf: ScalarFn,
    cdf: ScalarFn,
    quantile: Option<ScalarFn>,
    score: ScalarFn,
    fisher: Arc<OnceLock<f64>>,
}

impl std::fmt::Debug for ErrorModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ErrorModel")
            .field("gaussian", &self.gaussian)
            .finish()
    }
}

/// The standard normal error model; its score is `psi_f(y) = -y` exactly.
pub fn gaussian_model() -> ErrorModel {
    ErrorModel {
        gaussian: true,
        pdf: Arc::new(norm_pdf),
        cdf: Arc::new(norm_cdf),
        quantile: Some(Arc::new(norm_quantile)),
        score: Arc::new(|y| -y),
        fisher: Arc::new(OnceLock::from(1.0)),
    }
}

impl ErrorModel {
    pub fn gaussian() -> ErrorModel {
        gaussian_model()
    }

    /// Build a model from closures. `quantile` may be omitted, in which case
    /// it is computed by bracketed root-finding on `cdf` to 1e-12.
    pub fn from_parts(
        pdf: impl Fn(f64) -> f64 + Send + Sync + 'static,
        cdf: impl Fn(f64) -> f64 + Send + Sync + 'static,
        score: impl Fn(f64) -> f64 + Send + Sync + 'static,
        quantile: Option<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
    ) -> ErrorModel {
        ErrorModel {
            gaussian: false,
            pdf: Arc::new(pdf),
            cdf: Arc::new(cdf),
            quantile: quantile.map(|q| Arc::from(q) as ScalarFn),
            score: Arc::new(score),
            fisher: Arc::new(OnceLock::new()),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        self.gaussian
    }

    pub fn pdf(&self, y: f64) -> f64 {
        (self.pdf)(y)
    }

    pub fn cdf(&self, y: f64) -> f64 {
        (self.cdf)(y)
    }

    /// Upper tail probability; the Gaussian path avoids cancellation.
    pub fn sf(&self, y: f64) -> f64 {
        if self.gaussian {
            norm_sf(y)
        } else {
            1.0 - self.cdf(y)
        }
    }

    pub fn score(&self, y: f64) -> f64 {
        (self.score)(y)
    }

    pub fn quantile(&self, u: f64) -> f64 {
        if let Some(q) = &self.quantile {
            return q(u);
        }
        self.quantile_by_root(u)
    }

    fn quantile_by_root(&self, u: f64) -> f64 {
        // expand a bracket, then bisect cdf to 1e-12
        let mut lo = -1.0;
        let mut hi = 1.0;
        let mut k = 0;
        while self.cdf(lo) > u && k < 200 {
            lo *= 2.0;
            k += 1;
        }
        k = 0;
        while self.cdf(hi) < u && k < 200 {
            hi *= 2.0;
            k += 1;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if hi - lo < 1e-12 * (1.0 + mid.abs()) {
                return mid;
            }
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// One draw by inverse CDF from a seeded uniform stream.
    pub fn sample(&self, stream: &mut SeedStream) -> f64 {
        self.quantile(stream.uniform())
    }

    /// Integration range used for all inner products against `F`. The
    /// 1e-12 tail quantiles keep truncation below the 1e-8 tolerances of the
    /// second-moment identities.
    pub fn support_range(&self) -> (f64, f64) {
        (self.quantile(1e-12), self.quantile(1.0 - 1e-12))
    }

    /// Inner product `<g1, g2> = int g1 g2 dF` by adaptive quadrature.
    pub fn inner(&self, g1: &dyn Fn(f64) -> f64, g2: &dyn Fn(f64) -> f64) -> f64 {
        let (lo, hi) = self.support_range();
        quad::integrate(&|y| g1(y) * g2(y) * self.pdf(y), lo, hi, 1e-10)
    }

    /// Fisher information for location, cached after the first call.
    pub fn fisher_information(&self) -> f64 {
        *self.fisher.get_or_init(|| {
            self.inner(&|y| self.score(y), &|y| self.score(y))
        })
    }
}

/// Extended score `h(y) = (1, psi_f(y))`.
pub fn extended_score(model: &ErrorModel, y: f64) -> Result<[f64; 2]> {
    if !y.is_finite() {
        return Err(Error::invalid(format!("extended score at non-finite y = {y}")));
    }
    let s = model.score(y);
    if !s.is_finite() {
        return Err(Error::invalid(format!("score undefined at y = {y}")));
    }
    Ok([1.0, s])
}

/// Extended location-scale score
/// `h_sigma(y) = (1, psi_f(y/s)/s, [1 + (y/s) psi_f(y/s)]/s)`.
pub fn extended_score_ls(model: &ErrorModel, y: f64, sigma: f64) -> Result<[f64; 3]> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let u = y / sigma;
    let s = model.score(u);
    if !s.is_finite() {
        return Err(Error::invalid(format!("score undefined at y/sigma = {u}")));
    }
    Ok([1.0, s / sigma, (1.0 + u * s) / sigma])
}

const PHI_GRID: usize = 2048;

/// An indexing family `phi_t(y) = phi(y) 1{y <= L^{-1}(t)}` built from a base
/// function `phi`, where `L(y) = int_{-inf}^y phi^2 dF`.
pub struct PhiFamily {
    model: ErrorModel,
    phi: ScalarFn,
    zs: Vec<f64>,
    cum: Vec<f64>,
    total: f64,
}

/// Construct the family, verifying `L` is strictly increasing across the
/// working support.
pub fn make_phi_family(
    model: &ErrorModel,
    phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> Result<PhiFamily> {
    let phi: ScalarFn = Arc::new(phi);
    let (zlo, zhi) = model.support_range();
    let mut zs = Vec::with_capacity(PHI_GRID + 1);
    for k in 0..=PHI_GRID {
        // grid uniform in t-space so cells carry comparable mass
        let t = 1e-12 + (1.0 - 2e-12) * k as f64 / PHI_GRID as f64;
        zs.push(model.quantile(t));
    }
    zs[0] = zlo;
    zs[PHI_GRID] = zhi;
    let mut cum = Vec::with_capacity(PHI_GRID + 1);
    cum.push(0.0);
    let mut acc = 0.0;
    let p = phi.clone();
    let m = model.clone();
    let integrand = move |y: f64| {
        let v = p(y);
        v * v * m.pdf(y)
    };
    for w in zs.windows(2) {
        let inc = quad::integrate(&integrand, w[0], w[1], 1e-13);
        acc += inc;
        cum.push(acc);
    }
    let total = acc;
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::invalid("int phi^2 dF is not finite and positive"));
    }
    for (k, w) in cum.windows(2).enumerate() {
        if w[1] - w[0] < total * 1e-15 {
            return Err(Error::invalid(format!(
                "L is not strictly increasing: flat cell near y = {:.4}",
                zs[k]
            )));
        }
    }
    Ok(PhiFamily {
        model: model.clone(),
        phi,
        zs,
        cum,
        total,
    })
}

impl PhiFamily {
    pub fn base(&self, y: f64) -> f64 {
        (self.phi)(y)
    }

    pub fn base_fn(&self) -> ScalarFn {
        self.phi.clone()
    }

    /// Total mass `int phi^2 dF`; `member(t)` is defined for `t` up to this.
    pub fn total(&self) -> f64 {
        self.total
    }

    /// `L(y) = int_{-inf}^y phi^2 dF` via the cumulative cache plus an exact
    /// local panel.
    pub fn l_value(&self, y: f64) -> f64 {
        if y <= self.zs[0] {
            return 0.0;
        }
        if y >= self.zs[PHI_GRID] {
            return self.total;
        }
        let k = match self.zs.binary_search_by(|z| z.partial_cmp(&y).unwrap()) {
            Ok(i) => return self.cum[i],
            Err(i) => i - 1,
        };
        let p = &self.phi;
        let m = &self.model;
        let (v, _) = quad::gk15(&|z: f64| {
            let w = p(z);
            w * w * m.pdf(z)
        }, self.zs[k], y);
        self.cum[k] + v
    }

    /// `L^{-1}(t) = inf{y : L(y) >= t}` by bisection on the cache.
    pub fn l_inverse(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) || t > self.total + 1e-12 {
            return Err(Error::invalid(format!(
                "L^-1 argument {t} outside [0, {}]",
                self.total.min(1.0)
            )));
        }
        if t <= 0.0 {
            return Ok(self.zs[0]);
        }
        if t >= self.total {
            return Ok(self.zs[PHI_GRID]);
        }
        let k = self.cum.partition_point(|&c| c < t) - 1;
        let mut lo = self.zs[k];
        let mut hi = self.zs[k + 1];
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if hi - lo < 1e-13 * (1.0 + mid.abs()) {
                break;
            }
            if self.l_value(mid) < t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// The member `phi_t(y) = phi(y) 1{y <= L^{-1}(t)}`.
    pub fn member(&self, t: f64) -> Result<impl Fn(f64) -> f64 + '_> {
        let cut = self.l_inverse(t)?;
        let phi = self.phi.clone();
        Ok(move |y: f64| if y <= cut { phi(y) } else { 0.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_basics() {
        let m = gaussian_model();
        assert_eq!(m.score(0.0), 0.0);
        assert!((m.fisher_information() - 1.0).abs() < 1e-8);
        assert!((m.pdf(0.0) - 0.3989423).abs() < 1e-7);
    }

    #[test]
    fn quantile_cdf_roundtrip() {
        let m = gaussian_model();
        for i in 1..1000 {
            let u = i as f64 / 1000.0;
            let y = m.quantile(u);
            assert!((m.cdf(y) - u).abs() < 1e-10, "u={u}");
        }
    }

    #[test]
    fn custom_model_root_quantile() {
        // logistic distribution: cdf = 1/(1+e^-y), score = (1 - 2F(y))
        let m = ErrorModel::from_parts(
            |y| {
                let e = (-y).exp();
                e / (1.0 + e).powi(2)
            },
            |y| 1.0 / (1.0 + (-y).exp()),
            |y| 1.0 - 2.0 / (1.0 + (-y).exp()),
            None,
        );
        for u in [0.01, 0.2, 0.5, 0.8, 0.99] {
            let y = m.quantile(u);
            let exact = (u / (1.0 - u)).ln();
            assert!((y - exact).abs() < 1e-9, "u={u}: {y} vs {exact}");
        }
        // Fisher information of the logistic is 1/3
        assert!((m.fisher_information() - 1.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn score_integrates_to_zero() {
        let m = gaussian_model();
        let v = m.inner(&|y| m.score(y), &|_| 1.0);
        assert!(v.abs() < 1e-8);
    }

    #[test]
    fn extended_scores() {
        let m = gaussian_model();
        assert_eq!(extended_score(&m, 0.0).unwrap(), [1.0, 0.0]);
        assert_eq!(extended_score(&m, 1.5).unwrap(), [1.0, -1.5]);
        assert_eq!(extended_score(&m, -2.0).unwrap(), [1.0, 2.0]);
        let h = extended_score_ls(&m, 0.0, 1.0).unwrap();
        assert_eq!(h, [1.0, 0.0, 1.0]);
        let h = extended_score_ls(&m, 1.0, 1.0).unwrap();
        assert!((h[1] + 1.0).abs() < 1e-14 && h[2].abs() < 1e-14);
        let h = extended_score_ls(&m, 2.0, 2.0).unwrap();
        assert!((h[1] + 0.5).abs() < 1e-14 && h[2].abs() < 1e-14);
        assert!(extended_score_ls(&m, 1.0, 0.0).is_err());
    }

    #[test]
    fn phi_family_indicator_case() {
        // phi == 1 gives L = F and member(t) = 1{y <= F^-1(t)}
        let m = gaussian_model();
        let fam = make_phi_family(&m, |_| 1.0).unwrap();
        assert!((fam.total() - 1.0).abs() < 1e-9);
        for t in [0.1, 0.5, 0.9] {
            let cut = fam.l_inverse(t).unwrap();
            assert!((cut - m.quantile(t)).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn phi_family_linear_case() {
        let m = gaussian_model();
        let fam = make_phi_family(&m, |y| y).unwrap();
        // L(0) = 1/2 by symmetry; L(1) = Phi(1) - f(1)
        assert!((fam.l_value(0.0) - 0.5).abs() < 1e-9);
        let expect = norm_cdf(1.0) - norm_pdf(1.0);
        assert!((fam.l_value(1.0) - expect).abs() < 1e-9);
        assert!((expect - 0.5993740215493996).abs() < 5e-15);
    }

    #[test]
    fn phi_family_flat_detected() {
        let m = gaussian_model();
        let r = make_phi_family(&m, |y| if y > 0.0 { y } else { 0.0 });
        assert!(r.is_err());
    }

    #[test]
    fn phi_family_member_norms() {
        // <phi_t, phi_t> = t and <phi_t2 - phi_t1, phi_t1> = 0
        let m = gaussian_model();
        let fam = make_phi_family(&m, |y| y).unwrap();
        for k in 1..=9 {
            let t = k as f64 / 10.0;
            let mem = fam.member(t).unwrap();
            let v = m.inner(&|y| mem(y), &|y| mem(y));
            assert!((v - t).abs() < 1e-8, "t={t}: {v}");
        }
        let m1 = fam.member(0.3).unwrap();
        let m2 = fam.member(0.7).unwrap();
        let cross = m.inner(&|y| m2(y) - m1(y), &|y| m1(y));
        assert!(cross.abs() < 1e-8);
    }

    #[test]
    fn sampler_ks_distance() {
        let m = gaussian_model();
        let mut stream = SeedStream::new(1234);
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n).map(|_| m.sample(&mut stream)).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, y) in draws.iter().enumerate() {
            let c = m.cdf(*y);
            ks = ks.max((c - i as f64 / n as f64).abs());
            ks = ks.max((c - (i + 1) as f64 / n as f64).abs());
        }
        let bound = 2.0 / (n as f64).sqrt() * 1.5;
        assert!(ks < bound, "ks = {ks}, bound = {bound}");
    }
}
