//! Composite weights on the probability simplex.
//!
//! Holds the signal-to-noise objective `αᵀψ / √(αᵀρα)`, its exact maximizer
//! over the simplex, the Monte Carlo calibration of the maximized statistic
//! under the point null, and shrinkage of learned weights toward a reference.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;
const TIE_TOL: f64 = 1e-12;
/// Face enumeration is exponential in K.
pub const MAX_ENDPOINTS: usize = 16;

/// A point on the simplex: nonnegative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(DVector<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("weight vector must be nonempty".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "weights must be nonnegative: {weights:?}"
            )));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::Config(format!("weights sum to {s}, not 1")));
        }
        Ok(Self(DVector::from_vec(weights)))
    }

    /// Rescales nonnegative `raw` onto the simplex.
    pub fn normalized(raw: Vec<f64>) -> Result<Self> {
        let s: f64 = raw.iter().sum();
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) || s <= 0.0 {
            return Err(Error::Config(format!("cannot normalize {raw:?}")));
        }
        Ok(Self(DVector::from_iterator(
            raw.len(),
            raw.iter().map(|w| w / s),
        )))
    }

    /// Equal weights `1/K`.
    pub fn reference(k: usize) -> Self {
        Self(DVector::from_element(k, 1.0 / k as f64))
    }

    pub fn vertex(k: usize, i: usize) -> Self {
        let mut v = DVector::zeros(k);
        v[i] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn distance(&self, other: &WeightVector) -> f64 {
        (&self.0 - &other.0).norm()
    }
}

fn quad_form(alpha: &[f64], rho: &DMatrix<f64>) -> f64 {
    let k = alpha.len();
    let mut s = 0.0;
    for a in 0..k {
        if alpha[a] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for b in 0..k {
            row += rho[(a, b)] * alpha[b];
        }
        s += alpha[a] * row;
    }
    s
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Signal-to-noise ratio `αᵀψ / √(αᵀρα)`.
pub fn snr(alpha: &WeightVector, psi: &DVector<f64>, rho: &DMatrix<f64>) -> Result<f64> {
    let k = alpha.len();
    if psi.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: psi.len(),
        });
    }
    if rho.shape() != (k, k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: rho.nrows(),
        });
    }
    let var = quad_form(alpha.as_slice(), rho);
    if !(var > 0.0) {
        return Err(Error::DegenerateVariance(var));
    }
    Ok(dot(alpha.as_slice(), psi.as_slice()) / var.sqrt())
}

/// One face of the simplex with at least two active coordinates and the
/// inverse of `ρ` restricted to it.
#[derive(Debug, Clone)]
struct Face {
    idx: Vec<usize>,
    inv: DMatrix<f64>,
}

/// Exact maximizer of the signal-to-noise ratio over the simplex for a fixed
/// covariance.
///
/// On the relative interior of a face `S`, the only stationary points of the
/// ratio lie on the ray through `ρ_S⁻¹ψ_S`; a positive multiple is a local
/// maximum. The global maximum is therefore attained at a vertex or at such a
/// face point, and enumerating every face finds it. Faces whose restricted
/// covariance is singular are skipped. The reference weight is always a
/// candidate so that degenerate cases resolve toward it.
#[derive(Debug, Clone)]
pub struct SimplexMaximizer {
    rho: DMatrix<f64>,
    alpha_ref: WeightVector,
    faces: Vec<Face>,
}

impl SimplexMaximizer {
    pub fn new(rho: &DMatrix<f64>, alpha_ref: &WeightVector) -> Result<Self> {
        let k = rho.nrows();
        if rho.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: rho.ncols(),
            });
        }
        if alpha_ref.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: alpha_ref.len(),
            });
        }
        if k == 0 || k > MAX_ENDPOINTS {
            return Err(Error::Config(format!(
                "unsupported number of endpoints {k}"
            )));
        }
        if rho.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("rho"));
        }
        let mut faces = Vec::new();
        for mask in 1u32..(1u32 << k) {
            if mask.count_ones() < 2 {
                continue;
            }
            let idx: Vec<usize> = (0..k).filter(|&j| mask & (1 << j) != 0).collect();
            let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| rho[(idx[a], idx[b])]);
            if let Some(chol) = sub.cholesky() {
                let inv = chol.inverse();
                if inv.iter().all(|x| x.is_finite()) {
                    faces.push(Face { idx, inv });
                }
            }
        }
        Ok(Self {
            rho: rho.clone(),
            alpha_ref: alpha_ref.clone(),
            faces,
        })
    }

    pub fn k(&self) -> usize {
        self.rho.nrows()
    }

    fn ratio(&self, alpha: &[f64], psi: &[f64]) -> Option<f64> {
        let var = quad_form(alpha, &self.rho);
        (var > 0.0).then(|| dot(alpha, psi) / var.sqrt())
    }

    /// Calls `visit` with every candidate point and its ratio.
    fn for_each_candidate(
        &self,
        psi: &[f64],
        buf: &mut Vec<f64>,
        mut visit: impl FnMut(&[f64], f64),
    ) {
        let k = self.k();
        buf.clear();
        buf.resize(k, 0.0);
        for j in 0..k {
            buf.iter_mut().for_each(|x| *x = 0.0);
            buf[j] = 1.0;
            if let Some(v) = self.ratio(buf, psi) {
                visit(buf, v);
            }
        }
        for face in &self.faces {
            let m = face.idx.len();
            buf.iter_mut().for_each(|x| *x = 0.0);
            let mut total = 0.0;
            let mut positive = true;
            for a in 0..m {
                let mut x = 0.0;
                for b in 0..m {
                    x += face.inv[(a, b)] * psi[face.idx[b]];
                }
                if !(x > 0.0) {
                    positive = false;
                    break;
                }
                buf[face.idx[a]] = x;
                total += x;
            }
            if !positive || !total.is_finite() {
                continue;
            }
            buf.iter_mut().for_each(|x| *x /= total);
            if let Some(v) = self.ratio(buf, psi) {
                visit(buf, v);
            }
        }
        if let Some(v) = self.ratio(self.alpha_ref.as_slice(), psi) {
            visit(self.alpha_ref.as_slice(), v);
        }
    }

    /// Maximum of the ratio over the simplex.
    pub fn max_value(&self, psi: &[f64], buf: &mut Vec<f64>) -> Option<f64> {
        let mut best: Option<f64> = None;
        self.for_each_candidate(psi, buf, |_, v| {
            if best.is_none_or(|b| v > b) {
                best = Some(v);
            }
        });
        best
    }

    /// Argmax and maximum. Near-ties (within 1e-12) go to the candidate
    /// closest to the reference, then to the lexicographically smallest.
    pub fn maximize(&self, psi: &DVector<f64>) -> Result<(WeightVector, f64)> {
        if psi.len() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                got: psi.len(),
            });
        }
        if psi.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("psi"));
        }
        let reference = self.alpha_ref.as_slice().to_vec();
        let dist = |a: &[f64]| -> f64 {
            a.iter()
                .zip(&reference)
                .map(|(x, r)| (x - r) * (x - r))
                .sum::<f64>()
        };
        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut buf = Vec::with_capacity(self.k());
        self.for_each_candidate(psi.as_slice(), &mut buf, |cand, v| {
            let replace = match &best {
                None => true,
                Some((b, bv)) => {
                    let tol = TIE_TOL * bv.abs().max(1.0);
                    if v > bv + tol {
                        true
                    } else if v >= bv - tol {
                        let (dc, db) = (dist(cand), dist(b));
                        if (dc - db).abs() > TIE_TOL {
                            dc < db
                        } else {
                            cand.iter()
                                .zip(b)
                                .find(|(x, y)| x != y)
                                .is_some_and(|(x, y)| x < y)
                        }
                    } else {
                        false
                    }
                }
            };
            if replace {
                best = Some((cand.to_vec(), v));
            }
        });
        let (alpha, value) = best.ok_or(Error::DegenerateVariance(0.0))?;
        Ok((WeightVector::normalized(alpha)?, value))
    }
}

/// Argmax of [`snr`] over the simplex and the maximized ratio (not scaled by
/// `√n`). Ties resolve toward equal weights.
pub fn optimize_weights(psi: &DVector<f64>, rho: &DMatrix<f64>) -> Result<(WeightVector, f64)> {
    optimize_weights_with_reference(psi, rho, &WeightVector::reference(psi.len()))
}

pub fn optimize_weights_with_reference(
    psi: &DVector<f64>,
    rho: &DMatrix<f64>,
    alpha_ref: &WeightVector,
) -> Result<(WeightVector, f64)> {
    if psi.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("psi"));
    }
    if psi.len() != rho.nrows() {
        return Err(Error::DimensionMismatch {
            expected: rho.nrows(),
            got: psi.len(),
        });
    }
    SimplexMaximizer::new(rho, alpha_ref)?.maximize(psi)
}

/// Tuning for the shrinkage step and its Monte Carlo null calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizationConfig {
    alpha_ref: WeightVector,
    c_constant: f64,
    mc_draws: usize,
}

impl StabilizationConfig {
    pub const MIN_DRAWS: usize = 1000;

    pub fn new(alpha_ref: WeightVector, c_constant: f64, mc_draws: usize) -> Result<Self> {
        if !(c_constant > 0.0) || c_constant.is_nan() {
            return Err(Error::Config(format!(
                "C must be positive, got {c_constant}"
            )));
        }
        if mc_draws < Self::MIN_DRAWS {
            return Err(Error::Config(format!(
                "need at least {} Monte Carlo draws, got {mc_draws}",
                Self::MIN_DRAWS
            )));
        }
        Ok(Self {
            alpha_ref,
            c_constant,
            mc_draws,
        })
    }

    pub fn alpha_ref(&self) -> &WeightVector {
        &self.alpha_ref
    }

    pub fn c_constant(&self) -> f64 {
        self.c_constant
    }

    pub fn mc_draws(&self) -> usize {
        self.mc_draws
    }
}

/// What one training fold learned.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingFoldSummary {
    pub alpha_adapt: WeightVector,
    /// `√n_train` times the maximized training ratio.
    pub t_star: f64,
    pub p_value: f64,
    pub alpha_stab: WeightVector,
}

/// Clips negative eigenvalues of a symmetric matrix at zero.
///
/// Returns the input unchanged when it is already PSD; errors if the most
/// negative eigenvalue is below `-1e-6 · trace`.
pub fn repair_psd(rho: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if rho.iter().any(|x| !x.is_finite()) {
        return Err(Error::Covariance("non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(rho.clone());
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(rho.clone());
    }
    if min < -1e-6 * rho.trace().abs() {
        return Err(Error::Covariance(format!(
            "eigenvalue {min:e} is too negative"
        )));
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose())
}

/// Square-root factor `L` with `L Lᵀ = ρ` for a PSD `ρ`.
fn psd_factor(rho: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if (0..rho.nrows()).any(|j| !(rho[(j, j)] > 0.0)) {
        return Err(Error::Covariance("diagonal must be positive".into()));
    }
    let repaired = repair_psd(rho)?;
    if let Some(chol) = repaired.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = SymmetricEigen::new(repaired);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let l = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
    if l.iter().any(|x| !x.is_finite()) {
        return Err(Error::Covariance("eigendecomposition failed".into()));
    }
    Ok(l)
}

/// Draws `S_b = max_α αᵀZ_b / √(αᵀρα)` for `Z_b ~ N(0, ρ)`, `b = 1..B`.
pub fn supremum_null_draws<R: Rng + ?Sized>(
    rho: &DMatrix<f64>,
    draws: usize,
    alpha_ref: &WeightVector,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let k = rho.nrows();
    let factor = psd_factor(rho)?;
    let maximizer = SimplexMaximizer::new(&repair_psd(rho)?, alpha_ref)?;
    let mut xi = vec![0.0; k];
    let mut z = vec![0.0; k];
    let mut buf = Vec::with_capacity(k);
    let mut out = Vec::with_capacity(draws);
    for _ in 0..draws {
        xi.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
        for a in 0..k {
            z[a] = (0..k).map(|b| factor[(a, b)] * xi[b]).sum();
        }
        let s = maximizer
            .max_value(&z, &mut buf)
            .ok_or_else(|| Error::Covariance("no candidate with positive variance".into()))?;
        out.push(s);
    }
    Ok(out)
}

/// Monte Carlo p-value `(1 + #{S_b ≥ t_star}) / (B + 1)` of the maximized
/// statistic under the point null with covariance `rho`.
pub fn supremum_null_pvalue<R: Rng + ?Sized>(
    t_star: f64,
    rho: &DMatrix<f64>,
    cfg: &StabilizationConfig,
    rng: &mut R,
) -> Result<f64> {
    if t_star.is_nan() {
        return Err(Error::NonFinite("t_star"));
    }
    let draws = supremum_null_draws(rho, cfg.mc_draws(), cfg.alpha_ref(), rng)?;
    Ok(pvalue_from_draws(t_star, &draws))
}

/// Add-one exceedance p-value; ties count as exceedances.
pub fn pvalue_from_draws(t_star: f64, draws: &[f64]) -> f64 {
    let hits = draws.iter().filter(|&&s| s >= t_star).count();
    (1 + hits) as f64 / (draws.len() + 1) as f64
}

/// Shrinkage coefficient `min(1, C ln(n) p)`.
pub fn shrinkage(p_value: f64, n: usize, c_constant: f64) -> f64 {
    (c_constant * (n as f64).ln() * p_value).min(1.0)
}

/// `(1 - λ) α_adapt + λ α_ref` with `λ = min(1, C ln(n) p)`.
pub fn stabilize(
    alpha_adapt: &WeightVector,
    p_value: f64,
    n: usize,
    cfg: &StabilizationConfig,
) -> Result<WeightVector> {
    if !(p_value > 0.0 && p_value <= 1.0) {
        return Err(Error::Config(format!("p-value {p_value} outside (0, 1]")));
    }
    if n < 2 {
        return Err(Error::Config(format!("sample size {n} below 2")));
    }
    if alpha_adapt.len() != cfg.alpha_ref().len() {
        return Err(Error::DimensionMismatch {
            expected: cfg.alpha_ref().len(),
            got: alpha_adapt.len(),
        });
    }
    let lambda = shrinkage(p_value, n, cfg.c_constant());
    if lambda >= 1.0 {
        return Ok(cfg.alpha_ref().clone());
    }
    let mixed: Vec<f64> = alpha_adapt
        .as_slice()
        .iter()
        .zip(cfg.alpha_ref().as_slice())
        .map(|(a, r)| (1.0 - lambda) * a + lambda * r)
        .collect();
    WeightVector::normalized(mixed)
}
