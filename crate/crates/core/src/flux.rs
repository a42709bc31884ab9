//! Pointwise algebra of the regularized double-phase flux.
//!
//! For a space-time point with exponents `p, q`, shifted coefficients
//! `a_ε = ε + a`, `b_ε = ε + b` and `w_ε = ε² + |ξ|²`, the flux is
//!
//! ```text
//! F_ε(ξ) ξ = (a_ε w_ε^{(p-2)/2} + b_ε w_ε^{(q-2)/2}) ξ
//! ```
//!
//! Everything here is a pure function of its arguments. Vector arguments are
//! const-generic so the same code serves the 1D/2D solver and the 3D sampling checks.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluxError {
    #[error("degenerate evaluation: eps = 0, xi = 0 and min(p, q) < 2")]
    Degenerate,
    #[error("domain error: {0}")]
    Domain(String),
}

/// Exponents and shifted coefficients at one point of `Q_T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxPoint {
    pub p: f64,
    pub q: f64,
    pub a_eps: f64,
    pub b_eps: f64,
    pub eps: f64,
}

impl FluxPoint {
    /// Build from unshifted coefficients `a, b ≥ 0`.
    pub fn new(p: f64, q: f64, a: f64, b: f64, eps: f64) -> FluxPoint {
        FluxPoint {
            p,
            q,
            a_eps: eps + a,
            b_eps: eps + b,
            eps,
        }
    }

    #[inline]
    pub fn w(&self, xi_sq: f64) -> f64 {
        self.eps * self.eps + xi_sq
    }

    /// Scalar multiplier `F_ε` at `w = ε² + |ξ|²`; infinite for a singular zero gradient.
    #[inline]
    pub fn diffusivity(&self, w: f64) -> f64 {
        self.shifted_diffusivity(w, 0.0, 0.0)
    }

    /// `F_ε^{(s1,s2)} = a_ε w^{(p+s1-2)/2} + b_ε w^{(q+s2-2)/2}`.
    #[inline]
    pub fn shifted_diffusivity(&self, w: f64, s1: f64, s2: f64) -> f64 {
        self.a_eps * w.powf(0.5 * (self.p + s1 - 2.0)) + self.b_eps * w.powf(0.5 * (self.q + s2 - 2.0))
    }

    /// The two phase weights `a_ε w^{(p-2)/2}` and `b_ε w^{(q-2)/2}`.
    #[inline]
    pub fn phase_weights(&self, w: f64) -> (f64, f64) {
        (
            self.a_eps * w.powf(0.5 * (self.p - 2.0)),
            self.b_eps * w.powf(0.5 * (self.q - 2.0)),
        )
    }

    /// Convex potential `a_ε w^{p/2}/p + b_ε w^{q/2}/q` whose ξ-gradient is the flux.
    pub fn potential(&self, xi_sq: f64) -> f64 {
        let w = self.w(xi_sq);
        self.a_eps * w.powf(0.5 * self.p) / self.p + self.b_eps * w.powf(0.5 * self.q) / self.q
    }

    pub fn is_singular_at_zero(&self) -> bool {
        self.eps == 0.0 && self.p.min(self.q) < 2.0
    }

    /// 2-vector Jacobian used by the solver's assembly loop.
    #[inline]
    pub fn jacobian2(&self, xi: [f64; 2]) -> Result<[[f64; 2]; 2], FluxError> {
        flux_jacobian(self, &xi)
    }
}

fn norm_sq<const N: usize>(v: &[f64; N]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Value, optional ξ-Jacobian and `w_ε` of the flux at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxEval<const N: usize> {
    pub value: [f64; N],
    pub jacobian: Option<[[f64; N]; N]>,
    pub w_eps: f64,
    /// Set when `ε = 0`, `ξ = 0` and `min(p, q) < 2`; the value is then the zero vector.
    pub degenerate: bool,
}

pub fn evaluate<const N: usize>(fp: &FluxPoint, xi: &[f64; N], with_jacobian: bool) -> FluxEval<N> {
    let (value, degenerate) = flux_value(fp, xi);
    let jacobian = if with_jacobian {
        flux_jacobian(fp, xi).ok()
    } else {
        None
    };
    FluxEval {
        value,
        jacobian,
        w_eps: fp.w(norm_sq(xi)),
        degenerate,
    }
}

/// `F_ε(ξ)ξ`, plus the degenerate flag.
///
/// At `ε = 0, ξ = 0` with an exponent below 2 the multiplier blows up while the product
/// tends to zero for `p, q > 1`; the zero vector is returned and the flag raised.
pub fn flux_value<const N: usize>(fp: &FluxPoint, xi: &[f64; N]) -> ([f64; N], bool) {
    let xi_sq = norm_sq(xi);
    let w = fp.w(xi_sq);
    if w == 0.0 {
        return ([0.0; N], fp.p.min(fp.q) < 2.0);
    }
    let f = fp.diffusivity(w);
    let mut out = [0.0; N];
    for (o, x) in out.iter_mut().zip(xi) {
        *o = f * x;
    }
    (out, false)
}

/// `∂(F_ε(ξ)ξ)/∂ξ = Σ_phases c w^{(e-2)/2} [δ_ij + (e-2) ξ_i ξ_j / w]`, symmetric by construction.
pub fn flux_jacobian<const N: usize>(fp: &FluxPoint, xi: &[f64; N]) -> Result<[[f64; N]; N], FluxError> {
    let w = fp.w(norm_sq(xi));
    let mut jac = [[0.0; N]; N];
    if w == 0.0 {
        if fp.p.min(fp.q) < 2.0 {
            return Err(FluxError::Degenerate);
        }
        // only exponents equal to 2 survive at the origin
        let diag = if fp.p == 2.0 { fp.a_eps } else { 0.0 } + if fp.q == 2.0 { fp.b_eps } else { 0.0 };
        for (i, row) in jac.iter_mut().enumerate() {
            row[i] = diag;
        }
        return Ok(jac);
    }
    let (wa, wb) = fp.phase_weights(w);
    let diag = wa + wb;
    let outer = (wa * (fp.p - 2.0) + wb * (fp.q - 2.0)) / w;
    for i in 0..N {
        for j in i..N {
            let mut v = outer * xi[i] * xi[j];
            if i == j {
                v += diag;
            }
            jac[i][j] = v;
            jac[j][i] = v;
        }
    }
    Ok(jac)
}

/// `(F_ε(ξ)ξ − F_ε(η)η)·(ξ − η)`; nonnegative, symmetric in `(ξ, η)`.
pub fn monotonicity_gap<const N: usize>(fp: &FluxPoint, xi: &[f64; N], eta: &[f64; N]) -> f64 {
    let (fx, _) = flux_value(fp, xi);
    let (fe, _) = flux_value(fp, eta);
    (0..N).map(|i| (fx[i] - fe[i]) * (xi[i] - eta[i])).sum()
}

/// The constant `min{1, e − 1}` of the pointwise Hessian inequality.
pub fn hessian_constant(e: f64) -> f64 {
    1.0f64.min(e - 1.0)
}

/// `G_e(η) = tr(H²) + (e + r − 4)|Hη|² + (e − 2)(r − 2)(η·Hη)²` for symmetric `H`, `|η| ≤ 1`.
///
/// Bounded below by `min{1, e−1}·tr(H²)`.
pub fn hessian_quadratic_form<const N: usize>(
    h: &[[f64; N]; N],
    eta: &[f64; N],
    e: f64,
    r: f64,
) -> Result<f64, FluxError> {
    let eta_sq = norm_sq(eta);
    if !(eta_sq <= 1.0) {
        return Err(FluxError::Domain(format!("|eta| = {} > 1", eta_sq.sqrt())));
    }
    if !(e > 1.0) {
        return Err(FluxError::Domain(format!("e = {e} must exceed 1")));
    }
    if !(r >= 2.0) {
        return Err(FluxError::Domain(format!("r = {r} must be at least 2")));
    }
    let scale = h.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..N {
        for j in 0..i {
            if (h[i][j] - h[j][i]).abs() > 1e-12 * scale {
                return Err(FluxError::Domain("H is not symmetric".into()));
            }
        }
    }
    let trace_sq: f64 = h.iter().flatten().map(|v| v * v).sum();
    let mut h_eta = [0.0; N];
    for (i, out) in h_eta.iter_mut().enumerate() {
        *out = (0..N).map(|j| h[i][j] * eta[j]).sum();
    }
    let h_eta_sq = norm_sq(&h_eta);
    let quad: f64 = (0..N).map(|i| h_eta[i] * eta[i]).sum();
    Ok(trace_sq + (e + r - 4.0) * h_eta_sq + (e - 2.0) * (r - 2.0) * quad * quad)
}

/// The pair `(|ξ|^λ |ln|ξ||, C(μ)(1 + |ξ|^{λ+μ}))` with `C(μ) = 1/(e·μ)`.
///
/// `1/(eμ)` is the maximum of `s^{∓μ}|ln s|` on `s ≷ 1`, so the bound is tight.
pub fn log_power_bound(xi_norm: f64, lambda: f64, mu: f64) -> Result<(f64, f64), FluxError> {
    if !(lambda > 0.0) {
        return Err(FluxError::Domain(format!("lambda = {lambda} must be positive")));
    }
    if !(mu > 0.0 && mu < lambda) {
        return Err(FluxError::Domain(format!("mu = {mu} not in (0, {lambda})")));
    }
    if !(xi_norm >= 0.0) {
        return Err(FluxError::Domain(format!("|xi| = {xi_norm} is negative")));
    }
    let lhs = if xi_norm == 0.0 {
        0.0
    } else {
        xi_norm.powf(lambda) * xi_norm.ln().abs()
    };
    let c = 1.0 / (std::f64::consts::E * mu);
    Ok((lhs, c * (1.0 + xi_norm.powf(lambda + mu))))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullEpsBound {
    pub lower: f64,
    pub middle: f64,
    pub upper: f64,
}

/// The chain `a_ε|ξ|^{p+s1} + b_ε|ξ|^{q+s2} ≤ F_ε^{(s1,s2)} w_ε ≤ C + 2F_ε^{(s1,s2)}|ξ|²`,
/// with `C = a_ε(2ε²)^{(p+s1)/2} + b_ε(2ε²)^{(q+s2)/2}`.
pub fn null_eps_bound<const N: usize>(fp: &FluxPoint, xi: &[f64; N], s1: f64, s2: f64) -> NullEpsBound {
    let xi_sq = norm_sq(xi);
    let w = fp.w(xi_sq);
    let lower = fp.a_eps * xi_sq.powf(0.5 * (fp.p + s1)) + fp.b_eps * xi_sq.powf(0.5 * (fp.q + s2));
    let (middle, f) = if w == 0.0 {
        (0.0, 0.0)
    } else {
        let f = fp.shifted_diffusivity(w, s1, s2);
        (f * w, f)
    };
    let two_eps_sq = 2.0 * fp.eps * fp.eps;
    let c = fp.a_eps * two_eps_sq.powf(0.5 * (fp.p + s1)) + fp.b_eps * two_eps_sq.powf(0.5 * (fp.q + s2));
    NullEpsBound {
        lower,
        middle,
        upper: c + 2.0 * f * xi_sq,
    }
}
