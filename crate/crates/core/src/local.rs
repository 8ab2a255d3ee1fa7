//! Diagnostics for a single submodel update taken near the MLE.
//!
//! For a normalized current table `p`, data `r`, a submodel `C_j` and a
//! reference fit `p*`, write `L = log(r_j / p_j)` and
//!
//! * `g(a) = sum p exp(a L)`, the mass after an unnormalized step;
//! * `F(a) = a * sum p* L`;
//! * `I(p* : normalized step) = I(p* : p) - (F(a) - log g(a))`.
//!
//! `alpha0` solves `g = 1`, `alpha1` maximizes `F - log g` and `alpha2` is the
//! positive zero of `F - log g`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ips::{alpha0_root, LogRatio, MemberPlan, Root, FITTED_TOL};
use crate::models::{GeneratingClass, SpanningFamily, Submodel};
use crate::tables::{DenseTable, Projection, VarSet};

const GOLDEN_TOL: f64 = 1e-10;
const ALPHA2_TOL: f64 = 1e-10;
const ALPHA2_BRACKET: f64 = 64.0;

fn check_normalized(t: &DenseTable) -> Result<()> {
    let total = t.total();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::NotNormalized(total));
    }
    Ok(())
}

/// Largest `|r(i_A)/p(i_A) - 1|` over the model generators and every
/// generator and separator of the family members.
pub fn epsilon_of(p: &DenseTable, r: &DenseTable, model: &GeneratingClass, family: &SpanningFamily) -> Result<f64> {
    p.check_same_schema(r)?;
    check_normalized(p)?;
    check_normalized(r)?;
    let mut sets: Vec<VarSet> = model.generators().to_vec();
    for m in family.members() {
        sets.extend_from_slice(m.sequence().order());
        sets.extend_from_slice(m.sequence().separators());
    }
    sets.sort();
    sets.dedup();
    let mut eps = 0.0f64;
    for set in sets {
        let proj = Projection::new(p.schema(), set);
        let pm = proj.marginalize(p.values());
        let rm = proj.marginalize(r.values());
        for (&a, &b) in pm.iter().zip(&rm) {
            if a == 0.0 {
                return Err(Error::SupportMismatch { set: format!("{set:?}") });
            }
            eps = eps.max((b / a - 1.0).abs());
        }
    }
    Ok(eps)
}

/// Numerator and denominator of the closed-form `alpha0` approximation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alpha0Terms {
    /// `sum_k sum p(i_Ck) (rho_Ck - rho_Sk)^2`, with `rho_S1 = 1`.
    pub numerator: f64,
    /// `sum p (sum_C (rho_C - 1) - sum_S (rho_S - 1))^2` evaluated cellwise.
    pub denominator: f64,
    /// `sum p (sum_C (rho_C - 1)^2 - sum_S (rho_S - 1)^2)`.
    pub numerator_direct: f64,
    /// Largest `|rho - 1|` over the member's generators and separators.
    pub max_deviation: f64,
}

fn ratios(proj: &Projection, p: &[f64], r: &[f64]) -> Result<Vec<f64>> {
    let pm = proj.marginalize(p);
    let rm = proj.marginalize(r);
    pm.iter()
        .zip(&rm)
        .map(|(&a, &b)| {
            if a == 0.0 {
                Err(Error::SupportMismatch { set: format!("{:?}", proj.set()) })
            } else {
                Ok(b / a)
            }
        })
        .collect()
}

pub fn alpha0_terms(p: &DenseTable, r: &DenseTable, cj: &Submodel) -> Result<Alpha0Terms> {
    p.check_same_schema(r)?;
    check_normalized(p)?;
    let schema = p.schema();
    let (pv, rv) = (p.values(), r.values());
    let ps = cj.sequence();
    let n = pv.len();
    let mut linear = vec![0.0; n];
    let mut square = vec![0.0; n];
    let mut numerator = 0.0;
    let mut max_deviation = 0.0f64;
    for (k, &c) in ps.order().iter().enumerate() {
        let cp = Projection::new(schema, c);
        let rho_c = ratios(&cp, pv, rv)?;
        let pc = cp.marginalize(pv);
        max_deviation = rho_c.iter().fold(max_deviation, |m, x| m.max((x - 1.0).abs()));
        for (x, (l, s)) in cp.map().iter().zip(linear.iter_mut().zip(square.iter_mut())) {
            let d = rho_c[*x as usize] - 1.0;
            *l += d;
            *s += d * d;
        }
        if k == 0 {
            numerator += pc.iter().zip(&rho_c).map(|(w, x)| w * (x - 1.0) * (x - 1.0)).sum::<f64>();
            continue;
        }
        let s = ps.separators()[k - 1];
        let sp = Projection::new(schema, s);
        let rho_s = ratios(&sp, pv, rv)?;
        max_deviation = rho_s.iter().fold(max_deviation, |m, x| m.max((x - 1.0).abs()));
        // separator cell of each generator cell
        let inner = Projection::new(&schema.restrict(c), s.relative_to(c));
        numerator += pc
            .iter()
            .zip(&rho_c)
            .zip(inner.map())
            .map(|((w, x), &m)| {
                let d = x - rho_s[m as usize];
                w * d * d
            })
            .sum::<f64>();
        for (x, (l, sq)) in sp.map().iter().zip(linear.iter_mut().zip(square.iter_mut())) {
            let d = rho_s[*x as usize] - 1.0;
            *l -= d;
            *sq -= d * d;
        }
    }
    let denominator = pv.iter().zip(&linear).map(|(w, l)| w * l * l).sum();
    let numerator_direct = pv.iter().zip(&square).map(|(w, s)| w * s).sum();
    Ok(Alpha0Terms { numerator, denominator, numerator_direct, max_deviation })
}

/// Closed-form approximation of `alpha0`; `None` when the member's marginals
/// already match.
pub fn alpha0_approx(p: &DenseTable, r: &DenseTable, cj: &Submodel) -> Result<Option<f64>> {
    let t = alpha0_terms(p, r, cj)?;
    if t.max_deviation <= FITTED_TOL || t.denominator == 0.0 {
        return Ok(None);
    }
    Ok(Some(t.numerator / t.denominator))
}

/// Everything needed to evaluate `g`, `F` and the KL change along one step.
#[derive(Clone, Debug)]
pub struct StepCurve {
    p: Vec<f64>,
    lr: LogRatio,
    /// `sum p* L`.
    slope: f64,
    fitted: bool,
}

impl StepCurve {
    pub fn new(p_star: &DenseTable, p: &DenseTable, r: &DenseTable, cj: &Submodel) -> Result<Self> {
        p.check_same_schema(r)?;
        p.check_same_schema(p_star)?;
        check_normalized(p)?;
        check_normalized(p_star)?;
        let plan = MemberPlan::new(p.schema(), r.values(), cj);
        let fitted = plan.max_gap(p.values()) <= FITTED_TOL;
        let lr = plan.log_ratio(p.values())?;
        if p_star
            .values()
            .iter()
            .zip(lr.values())
            .any(|(&w, &l)| w > 0.0 && l == f64::NEG_INFINITY)
        {
            return Err(Error::SupportMismatch { set: "reference".into() });
        }
        let slope = lr.weighted_sum(p_star.values());
        Ok(StepCurve { p: p.values().to_vec(), lr, slope, fitted })
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn f(&self, alpha: f64) -> f64 {
        alpha * self.slope
    }

    pub fn log_g(&self, alpha: f64) -> f64 {
        self.lr.g_minus_one(&self.p, alpha).ln_1p()
    }

    /// `F - log g`, the KL decrease relative to the reference.
    pub fn gain(&self, alpha: f64) -> f64 {
        self.f(alpha) - self.log_g(alpha)
    }

    /// `g'(0) = sum p L`.
    pub fn g_prime_zero(&self) -> f64 {
        self.lr.g_prime(&self.p, 0.0)
    }

    pub fn alpha0(&self) -> Result<f64> {
        if self.fitted {
            return Err(Error::AlreadyFitted);
        }
        match alpha0_root(&self.p, &self.lr)? {
            Root::Found(a) => Ok(a),
            Root::Unresolved => Err(Error::Unresolved),
        }
    }

    pub fn alpha1(&self) -> Result<f64> {
        let a0 = self.alpha0()?;
        Ok(golden_max(|a| self.gain(a), 0.0, 4.0 * a0, GOLDEN_TOL))
    }

    pub fn alpha2(&self) -> Result<f64> {
        let a0 = self.alpha0()?;
        let a1 = self.alpha1()?;
        if !(self.gain(a1) > 0.0) {
            return Err(Error::NoRoot("F - log g has no positive part".into()));
        }
        let limit = ALPHA2_BRACKET * a0;
        let (mut lo, mut hi) = (a1, (2.0 * a1).max(a1 + a0));
        while self.gain(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > limit {
                if self.gain(limit) > 0.0 {
                    return Err(Error::NoRoot(format!("no sign change below {limit}")));
                }
                hi = limit;
            }
        }
        while hi - lo > ALPHA2_TOL {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.gain(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// `F(alpha) = alpha * sum p*(i) log(r_j(i) / p_j(i))`.
#[allow(non_snake_case)]
pub fn evaluate_F(alpha: f64, p_star: &DenseTable, p: &DenseTable, r: &DenseTable, cj: &Submodel) -> Result<f64> {
    Ok(StepCurve::new(p_star, p, r, cj)?.f(alpha))
}

/// Exponent maximizing `F - log g` (golden section on `[0, 4 alpha0]`).
pub fn find_alpha1(p_star: &DenseTable, p: &DenseTable, r: &DenseTable, cj: &Submodel) -> Result<f64> {
    StepCurve::new(p_star, p, r, cj)?.alpha1()
}

/// Positive zero of `F - log g` beyond `alpha1`.
pub fn find_alpha2(p_star: &DenseTable, p: &DenseTable, r: &DenseTable, cj: &Submodel) -> Result<f64> {
    StepCurve::new(p_star, p, r, cj)?.alpha2()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub log_g: f64,
    pub f_minus_log_g: f64,
}

pub fn figure1_curves(
    p_star: &DenseTable,
    p: &DenseTable,
    r: &DenseTable,
    cj: &Submodel,
    alpha_grid: &[f64],
) -> Result<Vec<CurvePoint>> {
    if let Some(&bad) = alpha_grid.iter().find(|a| !(**a >= 0.0)) {
        return Err(Error::Config(format!("alpha grid values must be nonnegative, got {bad}")));
    }
    let curve = StepCurve::new(p_star, p, r, cj)?;
    Ok(alpha_grid
        .iter()
        .map(|&alpha| {
            if alpha == 0.0 {
                CurvePoint { alpha, log_g: 0.0, f_minus_log_g: 0.0 }
            } else {
                CurvePoint { alpha, log_g: curve.log_g(alpha), f_minus_log_g: curve.gain(alpha) }
            }
        })
        .collect())
}

/// `n` evenly spaced points on `[0, hi]`.
pub fn alpha_grid(hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|k| hi * k as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaDiagnostics {
    pub alpha0_exact: f64,
    pub alpha0_approx: Option<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub epsilon: f64,
}

/// All exponents for member `cj` at `p`, with `epsilon` taken over `model` and `family`.
pub fn diagnose(
    p_star: &DenseTable,
    p: &DenseTable,
    r: &DenseTable,
    model: &GeneratingClass,
    family: &SpanningFamily,
    cj: &Submodel,
) -> Result<AlphaDiagnostics> {
    let curve = StepCurve::new(p_star, p, r, cj)?;
    Ok(AlphaDiagnostics {
        alpha0_exact: curve.alpha0()?,
        alpha0_approx: alpha0_approx(p, r, cj)?,
        alpha1: curve.alpha1()?,
        alpha2: curve.alpha2()?,
        epsilon: epsilon_of(p, r, model, family)?,
    })
}

/// `normalize(base * (1 + delta z))` with `z` uniform on `[-1, 1]` per cell.
pub fn perturb<R: Rng + ?Sized>(base: &DenseTable, delta: f64, rng: &mut R) -> Result<DenseTable> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::Config(format!("perturbation size must lie in [0, 1), got {delta}")));
    }
    let values = base
        .values()
        .iter()
        .map(|&x| x * (1.0 + delta * rng.random_range(-1.0..=1.0)))
        .collect();
    DenseTable::new(base.schema().clone(), values)?.normalize()
}

/// Repeats the normalized `alpha0` update on one submodel until its marginals
/// match the data, returning the final table and the number of updates.
pub fn repeat_until_fixed(p: &DenseTable, r: &DenseTable, cj: &Submodel, max_iter: usize) -> Result<(DenseTable, usize)> {
    p.check_same_schema(r)?;
    check_normalized(p)?;
    let plan = MemberPlan::new(p.schema(), r.values(), cj);
    let mut q = p.values().to_vec();
    for it in 0..max_iter {
        if plan.max_gap(&q) <= FITTED_TOL {
            return Ok((DenseTable::new(p.schema().clone(), q)?, it));
        }
        let lr = plan.log_ratio(&q)?;
        let alpha = match alpha0_root(&q, &lr)? {
            Root::Found(a) => a,
            Root::Unresolved => 1.0,
        };
        lr.apply(&mut q, alpha);
        let mass: f64 = q.iter().sum();
        q.iter_mut().for_each(|x| *x /= mass);
    }
    Err(Error::NoRoot(format!("no fixed point within {max_iter} updates")))
}
