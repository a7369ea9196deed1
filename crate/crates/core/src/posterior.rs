//! Marginal posterior of `θ` under a flat location prior and Jeffreys prior on `Σ`.
//!
//! The density has kernel `[1 + N(θ−Ȳ)ᵀS⁻¹(θ−Ȳ)]^{−N/2}`, a multivariate t with
//! `N − p` degrees of freedom and scale matrix `S / (N(N−p))`. The normalizing
//! constant is derived from that kernel:
//!
//! `log c = lnΓ(N/2) − lnΓ((N−p)/2) + (p/2) ln N − (p/2) ln π − ½ ln|S|`.

use nalgebra::DVector;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::spd::SpdMatrix;
use crate::stats::SufficientStats;

/// Posterior mass left outside the integration box.
const BOX_TAIL: f64 = 1e-6;
const PANEL_ORDER: usize = 8;

#[derive(Debug, Clone)]
pub struct PosteriorT {
    center: DVector<f64>,
    scatter: SpdMatrix,
    n: usize,
    log_norm: f64,
}

impl PosteriorT {
    pub fn new(center: DVector<f64>, scatter: SpdMatrix, n: usize) -> Result<Self> {
        let p = scatter.dim();
        if center.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: center.len(),
            });
        }
        if n <= p {
            return Err(Error::InvalidParameter(format!("posterior needs N > p (N = {n}, p = {p})")));
        }
        let (nf, pf) = (n as f64, p as f64);
        let log_norm = ln_gamma(nf / 2.0) - ln_gamma((nf - pf) / 2.0) + 0.5 * pf * nf.ln()
            - 0.5 * pf * std::f64::consts::PI.ln()
            - 0.5 * scatter.log_det();
        Ok(Self {
            center,
            scatter,
            n,
            log_norm,
        })
    }

    pub fn from_stats(stats: &SufficientStats) -> Result<Self> {
        Self::new(stats.ybar().clone(), stats.scatter().clone(), stats.n())
    }

    pub fn p(&self) -> usize {
        self.center.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dof(&self) -> usize {
        self.n - self.p()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn scatter(&self) -> &SpdMatrix {
        &self.scatter
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_norm
    }

    /// Log-density at `center + offset`.
    pub fn logpdf_at_offset(&self, offset: &DVector<f64>) -> Result<f64> {
        let q = self.scatter.quad_form_inv(offset)?;
        Ok(self.log_norm - 0.5 * self.n as f64 * (self.n as f64 * q).ln_1p())
    }

    pub fn logpdf(&self, theta: &DVector<f64>) -> Result<f64> {
        if theta.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                found: theta.len(),
            });
        }
        self.logpdf_at_offset(&(theta - &self.center))
    }
}

pub fn posterior_logpdf(theta: &DVector<f64>, post: &PosteriorT) -> Result<f64> {
    post.logpdf(theta)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let m = order as f64;
    for i in 0..order.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=order {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = m * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre rule on `[-half, half]` with about `nodes` points.
fn composite_rule(half: f64, nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(PANEL_ORDER);
    let panels = (nodes / PANEL_ORDER).max(1);
    let width = 2.0 * half / panels as f64;
    let mut xs = Vec::with_capacity(panels * PANEL_ORDER);
    let mut ws = Vec::with_capacity(panels * PANEL_ORDER);
    for k in 0..panels {
        let mid = -half + (k as f64 + 0.5) * width;
        for (x, w) in gx.iter().zip(&gw) {
            xs.push(mid + 0.5 * width * x);
            ws.push(0.5 * width * w);
        }
    }
    (xs, ws)
}

/// Tensor-product quadrature of the density over an axis-aligned box around `Ȳ`
/// that leaves at most `1e-6` of the mass outside. Returns the integral.
///
/// `nodes` is the number of quadrature points per axis (rounded down to whole
/// panels of eight).
pub fn posterior_normalization_check(post: &PosteriorT, nodes: usize) -> Result<f64> {
    let p = post.p();
    if p > 3 {
        return Err(Error::DimensionTooLarge(p));
    }
    let dof = post.dof() as f64;
    // x = θ − Ȳ has scale V = S/(N(N−p)) and xᵀV⁻¹x / p ~ F(p, N−p)
    let f = FisherSnedecor::new(p as f64, dof).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let radius = (p as f64 * f.inverse_cdf(1.0 - BOX_TAIL)).sqrt();
    let v_scale = 1.0 / (post.n() as f64 * dof);
    let rules: Vec<(Vec<f64>, Vec<f64>)> = (0..p)
        .map(|i| {
            let half = radius * (post.scatter().matrix()[(i, i)] * v_scale).sqrt();
            composite_rule(half, nodes)
        })
        .collect();

    let sizes: Vec<usize> = rules.iter().map(|r| r.0.len()).collect();
    let total: usize = sizes.iter().product();
    let mut index = vec![0usize; p];
    let mut offset = DVector::zeros(p);
    let mut acc = 0.0;
    for _ in 0..total {
        let mut weight = 1.0;
        for i in 0..p {
            offset[i] = rules[i].0[index[i]];
            weight *= rules[i].1[index[i]];
        }
        acc += weight * post.logpdf_at_offset(&offset)?.exp();
        for i in 0..p {
            index[i] += 1;
            if index[i] < sizes[i] {
                break;
            }
            index[i] = 0;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_distr::{ChiSquared, Distribution, StandardNormal};
    use statrs::distribution::{Continuous, StudentsT};

    use super::*;
    use crate::elliptical::{sample_errors, MixingMeasure};
    use crate::rng::substream;
    use crate::stats::{sufficient_stats, Dataset};

    fn seeded_posterior(p: usize, n: usize, seed: u64) -> PosteriorT {
        let mut rng = substream(seed, 0);
        let rows = sample_errors(&MixingMeasure::gaussian(), &SpdMatrix::ar1(p, 0.4).unwrap(), n, &mut rng).unwrap();
        PosteriorT::from_stats(&sufficient_stats(&Dataset::new(rows).unwrap()).unwrap()).unwrap()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((integral - 2.0 / 15.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn mode_at_center() {
        let post = seeded_posterior(3, 12, 1);
        let top = post.logpdf(post.center()).unwrap();
        assert_eq!(top, post.log_normalizer());
        let mut rng = substream(1, 1);
        for _ in 0..200 {
            let v = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            assert!(post.logpdf(&(post.center() + v)).unwrap() < top);
        }
    }

    #[test]
    fn symmetric_about_center() {
        let post = seeded_posterior(2, 10, 2);
        let v = DVector::from_vec(vec![0.3, -0.7]);
        assert_eq!(post.logpdf_at_offset(&v).unwrap(), post.logpdf_at_offset(&-&v).unwrap());

        let dyadic = PosteriorT::new(
            DVector::from_vec(vec![0.5, 1.25]),
            SpdMatrix::ar1(2, 0.25).unwrap(),
            6,
        )
        .unwrap();
        let d = DVector::from_vec(vec![0.25, -0.125]);
        let up = dyadic.center() + &d;
        let down = dyadic.center() - &d;
        assert_eq!(dyadic.logpdf(&up).unwrap(), dyadic.logpdf(&down).unwrap());
    }

    #[test]
    fn decreasing_along_rays() {
        let post = seeded_posterior(3, 9, 3);
        let dir = DVector::from_vec(vec![1.0, 2.0, -0.5]);
        let mut last = f64::INFINITY;
        for k in 0..50 {
            let v = post.logpdf_at_offset(&(&dir * (0.05 * k as f64))).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn univariate_matches_student_t() {
        for (n, s, ybar) in [(8usize, 3.5f64, 0.7f64), (4, 0.2, -2.0), (30, 12.0, 5.0)] {
            let post = PosteriorT::new(DVector::from_vec(vec![ybar]), SpdMatrix::diagonal(&[s]).unwrap(), n).unwrap();
            let nu = (n - 1) as f64;
            let scale = (s / (n as f64 * nu)).sqrt();
            let t = StudentsT::new(ybar, scale, nu).unwrap();
            for x in [ybar, ybar + 0.1, ybar - 1.3, ybar + 7.0] {
                let got = post.logpdf(&DVector::from_vec(vec![x])).unwrap();
                assert!((got - t.ln_pdf(x)).abs() < 1e-12, "n={n} x={x}: {got} vs {}", t.ln_pdf(x));
            }
        }
    }

    /// Adaptive Simpson over the whole line through `x = tan(u)`.
    fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        }
        fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (l, r) = (simpson(f, a, m), simpson(f, m, b));
            if depth == 0 || (l + r - whole).abs() <= 15.0 * tol {
                l + r + (l + r - whole) / 15.0
            } else {
                recurse(f, a, m, l, tol / 2.0, depth - 1) + recurse(f, m, b, r, tol / 2.0, depth - 1)
            }
        }
        recurse(f, a, b, simpson(f, a, b), tol, depth)
    }

    #[test]
    fn univariate_normalization() {
        let post = PosteriorT::new(DVector::from_vec(vec![1.5]), SpdMatrix::diagonal(&[4.0]).unwrap(), 8).unwrap();
        let quad = posterior_normalization_check(&post, 800).unwrap();
        assert!((quad - 1.0).abs() < 1e-4, "{quad}");

        let half = std::f64::consts::FRAC_PI_2;
        let g = |u: f64| {
            if u.abs() >= half {
                return 0.0;
            }
            let x = u.tan();
            let c = u.cos();
            post.logpdf_at_offset(&DVector::from_vec(vec![x])).unwrap().exp() / (c * c)
        };
        let oracle = adaptive_simpson(&g, -half, half, 1e-12, 40);
        assert!((oracle - 1.0).abs() < 1e-9, "{oracle}");
        assert!((quad - oracle).abs() < 1e-4);
    }

    #[test]
    fn bivariate_normalization_and_scale_invariance() {
        let post = seeded_posterior(2, 10, 4);
        let quad = posterior_normalization_check(&post, 240).unwrap();
        assert!((quad - 1.0).abs() < 1e-2, "{quad}");
        let scaled = PosteriorT::new(post.center().clone(), post.scatter().scaled(4.0).unwrap(), post.n()).unwrap();
        let quad4 = posterior_normalization_check(&scaled, 240).unwrap();
        assert!((quad4 - 1.0).abs() < 1e-2, "{quad4}");
        assert!((scaled.log_normalizer() - post.log_normalizer() + 2f64.ln() * 2.0).abs() < 1e-12);
    }

    #[test]
    fn trivariate_normalization() {
        let post = seeded_posterior(3, 11, 5);
        let quad = posterior_normalization_check(&post, 64).unwrap();
        assert!((quad - 1.0).abs() < 1e-2, "{quad}");
    }

    #[test]
    fn dimension_limits() {
        let post = seeded_posterior(4, 12, 6);
        assert!(matches!(posterior_normalization_check(&post, 16), Err(Error::DimensionTooLarge(4))));
        assert!(post.logpdf(&DVector::zeros(3)).is_err());
        assert!(PosteriorT::new(DVector::zeros(3), SpdMatrix::identity(3), 3).is_err());
    }

    #[test]
    fn importance_weighted_mean_is_center() {
        // Cauchy-type proposal with the posterior's scale has heavier tails than the target
        let post = seeded_posterior(3, 10, 7);
        let v = post.scatter().matrix() / (post.n() as f64 * post.dof() as f64);
        let lower = SpdMatrix::new(v).unwrap().cholesky_lower().clone();
        let chi = ChiSquared::new(1.0).unwrap();
        let draws = 200_000;
        let mut rng = substream(7, 9);
        let mut samples = Vec::with_capacity(draws);
        for _ in 0..draws {
            let z = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let w: f64 = chi.sample(&mut rng);
            let x = &lower * z / w.sqrt();
            let log_q = cauchy_logpdf(&x, &lower);
            let log_p = post.logpdf_at_offset(&x).unwrap();
            samples.push((x, (log_p - log_q).exp()));
        }
        let total: f64 = samples.iter().map(|s| s.1).sum();
        for i in 0..3 {
            let mean: f64 = samples.iter().map(|s| s.1 * s.0[i]).sum::<f64>() / total;
            let var: f64 = samples.iter().map(|s| (s.1 * (s.0[i] - mean)).powi(2)).sum::<f64>() / (total * total);
            let se = var.sqrt();
            assert!(mean.abs() <= 3.0 * se, "coord {i}: {mean} ± {se}");
        }
    }

    fn cauchy_logpdf(x: &DVector<f64>, lower: &DMatrix<f64>) -> f64 {
        let p = x.len() as f64;
        let w = lower.clone().solve_lower_triangular(x).unwrap();
        let log_det: f64 = lower.diagonal().iter().map(|d| d.ln()).sum();
        ln_gamma((1.0 + p) / 2.0) - ln_gamma(0.5) - 0.5 * p * std::f64::consts::PI.ln() - log_det
            - 0.5 * (1.0 + p) * w.norm_squared().ln_1p()
    }
}
