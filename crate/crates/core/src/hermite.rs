//! Probabilists' Hermite polynomials and Hermite expansions of subordinating
//! functions `f(x) = E[f(Z)] + sum_q c_q H_q(x)` with `c_q q! = E[f(Z) H_q(Z)]`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{gauss_hermite_expectation, hermite_rule, DEFAULT_HERMITE_NODES};

/// Default truncation order of an expansion.
pub const DEFAULT_ORDER: usize = 20;

/// Tail `c_Q^2 Q!` may not exceed this fraction of `Var[f(Z)]`.
pub const TAIL_TOLERANCE: f64 = 0.01;

/// `|c_1|` below this counts as zero when testing `E[f(Z)Z] != 0`.
pub const C1_TOLERANCE: f64 = 1e-10;

const SYMMETRY_POINTS: usize = 128;

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A `C^2` function together with its first two derivatives.
#[derive(Clone)]
pub struct SubordinatorFunction {
    name: String,
    eval: RealFn,
    deriv1: RealFn,
    deriv2: RealFn,
    declared_symmetric: bool,
}

impl fmt::Debug for SubordinatorFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SubordinatorFunction")
            .field("name", &self.name)
            .field("declared_symmetric", &self.declared_symmetric)
            .finish()
    }
}

impl SubordinatorFunction {
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
        deriv1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        deriv2: impl Fn(f64) -> f64 + Send + Sync + 'static,
        declared_symmetric: bool,
    ) -> Self {
        SubordinatorFunction {
            name: name.into(),
            eval: Arc::new(eval),
            deriv1: Arc::new(deriv1),
            deriv2: Arc::new(deriv2),
            declared_symmetric,
        }
    }

    /// `sum_k coeffs[k] x^k`; declared symmetric when every odd coefficient is zero.
    pub fn polynomial(coeffs: &[f64]) -> Self {
        let c: Arc<Vec<f64>> = Arc::new(coeffs.to_vec());
        let d1: Arc<Vec<f64>> = Arc::new(c.iter().enumerate().skip(1).map(|(k, a)| k as f64 * a).collect());
        let d2: Arc<Vec<f64>> = Arc::new(d1.iter().enumerate().skip(1).map(|(k, a)| k as f64 * a).collect());
        let horner = |c: Arc<Vec<f64>>| move |x: f64| c.iter().rev().fold(0.0, |acc, a| acc * x + a);
        let symmetric = coeffs.iter().skip(1).step_by(2).all(|a| *a == 0.0);
        let name = format!("poly{coeffs:?}");
        SubordinatorFunction::new(name, horner(c), horner(d1), horner(d2), symmetric)
    }

    pub fn identity() -> Self {
        SubordinatorFunction::new("x", |x| x, |_| 1.0, |_| 0.0, false)
    }

    pub fn square() -> Self {
        SubordinatorFunction::new("x2", |x| x * x, |x| 2.0 * x, |_| 2.0, true)
    }

    pub fn cube() -> Self {
        SubordinatorFunction::new("x3", |x| x * x * x, |x| 3.0 * x * x, |x| 6.0 * x, false)
    }

    pub fn cos() -> Self {
        SubordinatorFunction::new("cos", f64::cos, |x| -x.sin(), |x| -x.cos(), true)
    }

    pub fn tanh() -> Self {
        SubordinatorFunction::new(
            "tanh",
            f64::tanh,
            |x| 1.0 / x.cosh().powi(2),
            |x| -2.0 * x.tanh() / x.cosh().powi(2),
            false,
        )
    }

    /// Named catalogue used by the command line: `x`, `x2`, `x3`, `x+x2`, `cos`, `tanh`.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "x" => Self::identity(),
            "x2" => Self::square(),
            "x3" => Self::cube(),
            "x+x2" => {
                let mut f = Self::polynomial(&[0.0, 1.0, 1.0]);
                f.name = "x+x2".into();
                f
            }
            "cos" => Self::cos(),
            "tanh" => Self::tanh(),
            other => {
                return Err(Error::Usage(format!(
                    "unknown function '{other}' (expected x, x2, x3, x+x2, cos, tanh)"
                )))
            }
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn deriv1(&self, x: f64) -> f64 {
        (self.deriv1)(x)
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        (self.deriv2)(x)
    }

    pub fn declared_symmetric(&self) -> bool {
        self.declared_symmetric
    }

    /// `x -> f(scale * x)`, with derivatives rescaled by the chain rule.
    pub fn scaled(&self, scale: f64) -> Self {
        let (e, d1, d2) = (self.eval.clone(), self.deriv1.clone(), self.deriv2.clone());
        SubordinatorFunction {
            name: format!("{}(x*{scale})", self.name),
            eval: Arc::new(move |x| e(scale * x)),
            deriv1: Arc::new(move |x| scale * d1(scale * x)),
            deriv2: Arc::new(move |x| scale * scale * d2(scale * x)),
            declared_symmetric: self.declared_symmetric,
        }
    }

    /// Checks a symmetry declaration on 128 van der Corput points in `[-5, 5]`.
    pub fn verify_symmetry(&self) -> Result<()> {
        if !self.declared_symmetric {
            return Ok(());
        }
        for i in 1..=SYMMETRY_POINTS {
            let x = -5.0 + 10.0 * van_der_corput(i as u64);
            let (a, b) = (self.eval(x), self.eval(-x));
            if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::Validation(format!(
                    "'{}' declared symmetric but f({x}) = {a} != f({}) = {b}",
                    self.name, -x
                )));
            }
        }
        Ok(())
    }
}

fn van_der_corput(mut i: u64) -> f64 {
    let mut x = 0.0;
    let mut base = 0.5;
    while i > 0 {
        if i & 1 == 1 {
            x += base;
        }
        i >>= 1;
        base *= 0.5;
    }
    x
}

/// `q!` as a float.
pub fn factorial(q: usize) -> f64 {
    (1..=q).map(|k| k as f64).product()
}

/// `H_q(x)` via `H_{q+1} = x H_q - q H_{q-1}`.
pub fn hermite_eval(q: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..q {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Truncated expansion `c_0, ..., c_Q` of a subordinator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HermiteExpansion {
    pub coefficients: Vec<f64>,
    /// `sum_{q=1}^{Q} c_q^2 q!`
    pub variance_of_f: f64,
    /// `c_Q^2 Q!`
    pub tail_bound: f64,
}

impl HermiteExpansion {
    pub fn order(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn c(&self, q: usize) -> f64 {
        self.coefficients.get(q).copied().unwrap_or(0.0)
    }

    /// `E[f(Z)]`
    pub fn mean(&self) -> f64 {
        self.coefficients[0]
    }
}

/// `c_q = E[f(Z) H_q(Z)] / q!` for `q = 0..=order`.
///
/// Fails with [`Error::TruncationTail`] when `c_Q^2 Q!` exceeds 1% of the
/// truncated variance.
pub fn hermite_coefficients(f: &SubordinatorFunction, order: usize, n_nodes: usize) -> Result<HermiteExpansion> {
    if order < 1 {
        return Err(Error::Usage("expansion order must be >= 1".into()));
    }
    if n_nodes == 0 {
        return Err(Error::Usage("n_nodes must be >= 1".into()));
    }
    let rule = hermite_rule(n_nodes);
    let mut sums = vec![0.0; order + 1];
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let fx = f.eval(x);
        if !fx.is_finite() {
            return Err(Error::Domain(format!("f is not finite at quadrature node {x}")));
        }
        let (mut prev, mut cur) = (0.0, 1.0);
        for (q, s) in sums.iter_mut().enumerate() {
            *s += w * fx * cur;
            let next = x * cur - q as f64 * prev;
            prev = cur;
            cur = next;
        }
    }
    let mut qfact = 1.0;
    let mut coefficients = Vec::with_capacity(order + 1);
    for (q, s) in sums.iter().enumerate() {
        if q > 0 {
            qfact *= q as f64;
        }
        coefficients.push(s / qfact);
    }
    let variance_of_f: f64 = (1..=order).map(|q| coefficients[q].powi(2) * factorial(q)).sum();
    let tail_bound = coefficients[order].powi(2) * factorial(order);
    if variance_of_f > 0.0 && tail_bound > TAIL_TOLERANCE * variance_of_f {
        return Err(Error::TruncationTail { tail: tail_bound, variance: variance_of_f });
    }
    Ok(HermiteExpansion { coefficients, variance_of_f, tail_bound })
}

/// [`hermite_coefficients`] with the default order and node count.
pub fn expand(f: &SubordinatorFunction) -> Result<HermiteExpansion> {
    hermite_coefficients(f, DEFAULT_ORDER, DEFAULT_HERMITE_NODES)
}

/// `Cov[f(Z_1), f(Z_2)] = sum_{q>=1} c_q^2 q! rho^q` for standard normals with correlation `rho`.
pub fn subordinated_covariance(exp: &HermiteExpansion, rho: f64) -> Result<f64> {
    if !(rho.abs() <= 1.0) {
        return Err(Error::Domain(format!("correlation must lie in [-1, 1], got {rho}")));
    }
    let mut acc = 0.0;
    let mut power = 1.0;
    let mut qfact = 1.0;
    for q in 1..=exp.order() {
        power *= rho;
        qfact *= q as f64;
        acc += exp.coefficients[q].powi(2) * qfact * power;
    }
    Ok(acc)
}

/// Membership of `f` in the admissible class: symmetric when the covariance is
/// integrable, `E[f(Z)Z] = c_1 != 0` otherwise.
pub fn membership_in_m_c(f: &SubordinatorFunction, exp: &HermiteExpansion, covariance_integrable: bool) -> Result<bool> {
    f.verify_symmetry()?;
    if covariance_integrable {
        Ok(f.declared_symmetric())
    } else {
        Ok(exp.c(1).abs() > C1_TOLERANCE)
    }
}

/// `E[|g(Z)|^4]` by quadrature; `None` when the quadrature is not finite.
pub fn fourth_moment(g: impl Fn(f64) -> f64) -> Option<f64> {
    gauss_hermite_expectation(|x| g(x).powi(4), DEFAULT_HERMITE_NODES)
        .ok()
        .filter(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn hermite_eval_examples() {
        assert_eq!(hermite_eval(0, 3.7), 1.0);
        assert_eq!(hermite_eval(2, 0.0), -1.0);
        assert_eq!(hermite_eval(3, 2.0), 2.0);
    }

    #[test]
    fn coefficients_of_monomials() {
        let e = expand(&SubordinatorFunction::identity()).unwrap();
        for q in 0..=20 {
            assert!(close(e.c(q), if q == 1 { 1.0 } else { 0.0 }, 1e-10), "q={q}");
        }
        let e = expand(&SubordinatorFunction::square()).unwrap();
        for q in 0..=20 {
            let want = if q == 0 || q == 2 { 1.0 } else { 0.0 };
            assert!(close(e.c(q), want, 1e-10), "q={q}: {}", e.c(q));
        }
        let e = expand(&SubordinatorFunction::cube()).unwrap();
        for q in 0..=20 {
            let want = match q {
                1 => 3.0,
                3 => 1.0,
                _ => 0.0,
            };
            assert!(close(e.c(q), want, 1e-10), "q={q}");
        }
    }

    #[test]
    fn subordinated_covariance_examples() {
        let x = expand(&SubordinatorFunction::identity()).unwrap();
        assert_eq!(subordinated_covariance(&x, 0.0).unwrap(), 0.0);
        assert!(close(subordinated_covariance(&x, 0.3).unwrap(), 0.3, 1e-12));
        let x2 = expand(&SubordinatorFunction::square()).unwrap();
        assert!(close(subordinated_covariance(&x2, 0.5).unwrap(), 0.5, 1e-12));
        assert!(matches!(subordinated_covariance(&x2, 1.5), Err(Error::Domain(_))));
        assert!(close(subordinated_covariance(&x2, 1.0).unwrap(), x2.variance_of_f, 1e-12));
    }

    #[test]
    fn membership_examples() {
        let sq = SubordinatorFunction::square();
        let id = SubordinatorFunction::identity();
        let esq = expand(&sq).unwrap();
        let eid = expand(&id).unwrap();
        assert!(!membership_in_m_c(&sq, &esq, false).unwrap());
        assert!(membership_in_m_c(&id, &eid, false).unwrap());
        assert!(membership_in_m_c(&sq, &esq, true).unwrap());
        assert!(!membership_in_m_c(&id, &eid, true).unwrap());
    }

    #[test]
    fn false_symmetry_declaration_is_caught() {
        let liar = SubordinatorFunction::new("liar", |x| x * x + x, |x| 2.0 * x + 1.0, |_| 2.0, true);
        let e = expand(&liar).unwrap();
        assert!(matches!(membership_in_m_c(&liar, &e, true), Err(Error::Validation(_))));
    }

    #[test]
    fn slowly_decaying_expansion_trips_tail_check() {
        // c_q of exp(3x) is e^{4.5} 3^q / q!, far from negligible at Q = 4
        let f = SubordinatorFunction::new("exp3", |x| (3.0 * x).exp(), |x| 3.0 * (3.0 * x).exp(), |x| 9.0 * (3.0 * x).exp(), false);
        assert!(matches!(hermite_coefficients(&f, 4, 64), Err(Error::TruncationTail { .. })));
    }

    #[test]
    fn scaled_function_and_catalogue() {
        let f = SubordinatorFunction::from_name("x+x2").unwrap().scaled(2.0);
        assert_eq!(f.eval(1.0), 6.0);
        assert_eq!(f.deriv1(1.0), 2.0 * 5.0);
        assert_eq!(f.deriv2(0.3), 8.0);
        assert!(SubordinatorFunction::from_name("sqrt").is_err());
        for name in ["x", "x2", "x3", "x+x2", "cos", "tanh"] {
            SubordinatorFunction::from_name(name).unwrap().verify_symmetry().unwrap();
        }
    }

    #[test]
    fn fourth_moments() {
        assert!(close(fourth_moment(|x| x).unwrap(), 3.0, 1e-12));
        assert!(close(fourth_moment(|_| 2.0).unwrap(), 16.0, 1e-12));
    }
}
