//! Multivariate normal rectangle probabilities by separation of variables
//! and randomized lattice rules.
//!
//! The integrand is the usual sequential conditioning transform of the
//! rectangle probability to the unit cube, with the variables prioritized so
//! that the narrowest conditional intervals come first. Points come from a
//! Richtmyer lattice (fractional parts of `n sqrt(p)`) with a tent and an
//! antithetic transform; independent random shifts give the error estimate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Result, TrendError};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// 99% two-sided normal quantile used for the error estimate.
const ERROR_FACTOR: f64 = 2.576;
const PSD_TOLERANCE: f64 = 1e-8;
const ZERO_PIVOT: f64 = 1e-10;
const QUANTILE_UPPER: f64 = 10.0;
const QUANTILE_TOL: f64 = 1e-6;
const LANES: usize = 8;
const EQUI_REFERENCE: f64 = 2.0;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

pub fn normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

fn normal_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvnConfig {
    /// Target absolute error at 99% confidence.
    pub abs_tol: f64,
    pub seed: u64,
    pub shifts: usize,
    /// Total points (over all shifts) in the first round.
    pub initial_points: usize,
    /// Total point budget; exceeding it is an error.
    pub max_points: usize,
}

impl MvnConfig {
    pub fn new(abs_tol: f64, seed: u64) -> Self {
        MvnConfig {
            abs_tol,
            seed,
            ..Self::default()
        }
    }
}

impl Default for MvnConfig {
    fn default() -> Self {
        MvnConfig {
            abs_tol: 1e-4,
            seed: 42,
            shifts: 128,
            initial_points: 1024,
            max_points: 1 << 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvnEstimate {
    pub value: f64,
    /// Half-width of the 99% interval over the random shifts.
    pub error: f64,
    /// Lattice points per shift.
    pub points_per_shift: usize,
}

/// Validates a correlation matrix, clipping eigenvalues in `(-1e-8, 0)` to
/// zero and restoring the unit diagonal.
pub fn repair_correlation<T: Real>(r: &Matrix<T>) -> Result<Matrix<f64>> {
    if !r.is_square() || r.nrows() == 0 {
        return Err(TrendError::validation("correlation matrix must be square and nonempty"));
    }
    let mut c: Matrix<f64> = r.cast();
    c.symmetrize();
    let m = c.nrows();
    for i in 0..m {
        if !c.row(i).iter().all(|v| v.is_finite()) {
            return Err(TrendError::DegenerateVariance);
        }
        if (c[(i, i)] - 1.0).abs() > 1e-8 {
            return Err(TrendError::validation(format!(
                "correlation diagonal entry {i} is {}",
                c[(i, i)]
            )));
        }
    }
    let (vals, vecs) = c.symmetric_eigen();
    let min = vals[0];
    if min >= 0.0 {
        return Ok(c);
    }
    if min <= -PSD_TOLERANCE {
        return Err(TrendError::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    let clipped: Vec<f64> = vals.iter().map(|&v| v.max(0.0)).collect();
    let rebuilt = vecs.matmul(&Matrix::diagonal(&clipped)).matmul(&vecs.transpose());
    let d: Vec<f64> = rebuilt.diag().iter().map(|v| v.sqrt()).collect();
    let mut out = Matrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { rebuilt[(i, j)] / (d[i] * d[j]) });
    out.symmetrize();
    Ok(out)
}

/// Permuted Cholesky factor with rows scaled by their pivots.
#[derive(Debug, Clone)]
struct Factor {
    order: Vec<usize>,
    /// `l[i][k] / l[i][i]` for regular rows, raw `l[i][k]` for zero pivots.
    rows: Vec<Vec<f64>>,
    pivot: Vec<f64>,
}

impl Factor {
    /// Cholesky with Genz-Bretz prioritization: at each step the variable
    /// with the smallest expected conditional probability goes next.
    fn prioritized(corr: &Matrix<f64>, lower: &[f64], upper: &[f64]) -> Self {
        let m = corr.nrows();
        let mut sigma = corr.clone();
        let mut a = lower.to_vec();
        let mut b = upper.to_vec();
        let mut order: Vec<usize> = (0..m).collect();
        let mut l = Matrix::<f64>::zeros(m, m);
        let mut y = vec![0.0; m];
        for i in 0..m {
            let mut best = i;
            let mut best_val = f64::INFINITY;
            for j in i..m {
                let var = sigma[(j, j)] - (0..i).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
                let val = if var > ZERO_PIVOT {
                    let s: f64 = (0..i).map(|k| l[(j, k)] * y[k]).sum();
                    let sd = var.sqrt();
                    normal_cdf((b[j] - s) / sd) - normal_cdf((a[j] - s) / sd)
                } else {
                    2.0
                };
                if val < best_val {
                    best_val = val;
                    best = j;
                }
            }
            if best != i {
                order.swap(i, best);
                a.swap(i, best);
                b.swap(i, best);
                for k in 0..m {
                    let t = sigma[(i, k)];
                    sigma[(i, k)] = sigma[(best, k)];
                    sigma[(best, k)] = t;
                }
                for k in 0..m {
                    let t = sigma[(k, i)];
                    sigma[(k, i)] = sigma[(k, best)];
                    sigma[(k, best)] = t;
                }
                for k in 0..i {
                    let t = l[(i, k)];
                    l[(i, k)] = l[(best, k)];
                    l[(best, k)] = t;
                }
            }
            let var = sigma[(i, i)] - (0..i).map(|k| l[(i, k)] * l[(i, k)]).sum::<f64>();
            if var <= ZERO_PIVOT {
                continue;
            }
            let d = var.sqrt();
            l[(i, i)] = d;
            for r in (i + 1)..m {
                let s = sigma[(r, i)] - (0..i).map(|k| l[(r, k)] * l[(i, k)]).sum::<f64>();
                l[(r, i)] = s / d;
            }
            let s: f64 = (0..i).map(|k| l[(i, k)] * y[k]).sum();
            let (lo, hi) = ((a[i] - s) / d, (b[i] - s) / d);
            let mass = normal_cdf(hi) - normal_cdf(lo);
            y[i] = if mass > 1e-300 {
                (normal_pdf(lo) - normal_pdf(hi)) / mass
            } else if lo.is_finite() {
                lo
            } else {
                hi
            };
        }
        let pivot: Vec<f64> = (0..m).map(|i| l[(i, i)]).collect();
        let rows = (0..m)
            .map(|i| {
                let scale = if pivot[i] > 0.0 { pivot[i] } else { 1.0 };
                (0..i).map(|k| l[(i, k)] / scale).collect()
            })
            .collect();
        Factor { order, rows, pivot }
    }

    fn dim(&self) -> usize {
        self.order.len()
    }

    /// Limits in factor order, scaled by the pivots.
    fn limits(&self, lower: &[f64], upper: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let scale = |i: usize| if self.pivot[i] > 0.0 { self.pivot[i] } else { 1.0 };
        let a = (0..self.dim()).map(|i| lower[self.order[i]] / scale(i)).collect();
        let b = (0..self.dim()).map(|i| upper[self.order[i]] / scale(i)).collect();
        (a, b)
    }

    /// Integrand at `LANES` points at once; the lanes are independent, which
    /// keeps the sequential conditioning from stalling on each quantile.
    fn integrand(&self, a: &[f64], b: &[f64], w: &[[f64; LANES]], y: &mut [[f64; LANES]]) -> [f64; LANES] {
        let m = self.dim();
        let mut f = [1.0; LANES];
        for i in 0..m {
            let mut s = [0.0; LANES];
            for (k, &l) in self.rows[i].iter().enumerate() {
                for p in 0..LANES {
                    s[p] += l * y[k][p];
                }
            }
            if self.pivot[i] == 0.0 {
                for p in 0..LANES {
                    let slack = 1e-9 * (1.0 + s[p].abs());
                    if s[p] < a[i] - slack || s[p] > b[i] + slack {
                        f[p] = 0.0;
                    }
                    y[i][p] = 0.0;
                }
                continue;
            }
            for p in 0..LANES {
                let d = if a[i] == f64::NEG_INFINITY {
                    0.0
                } else {
                    normal_cdf(a[i] - s[p])
                };
                let e = normal_cdf(b[i] - s[p]);
                f[p] *= (e - d).max(0.0);
                if i + 1 < m {
                    let u = (d + w[i][p] * (e - d)).clamp(1e-300, 1.0 - f64::EPSILON / 2.0);
                    y[i][p] = normal_quantile(u);
                }
            }
        }
        f
    }
}

type Evaluation = (MvnEstimate, Option<usize>);

/// Root of the nondecreasing `prob(b) - level` on `[0, 10]`, starting from
/// `x0` where `prob` is already known. Secant steps are accepted once a
/// sign change within 1e-6 confirms the root; otherwise plain bisection.
fn refine_root(x0: f64, at_x0: Evaluation, mut prob: impl FnMut(f64) -> Evaluation, level: f64) -> (f64, Evaluation) {
    let g = |e: &Evaluation| e.0.value - level;
    let (mut x_prev, mut e_prev) = (x0, at_x0);
    let mut x = (x0 + 1e-3).min(QUANTILE_UPPER);
    let mut e = prob(x);
    for _ in 0..30 {
        let (g0, g1) = (g(&e_prev), g(&e));
        if g1 == 0.0 {
            return (x, e);
        }
        if g1 != g0 {
            let next = (x - g1 * (x - x_prev) / (g1 - g0)).clamp(0.0, QUANTILE_UPPER);
            (x_prev, e_prev) = (x, e);
            x = next;
            e = prob(x);
        }
        if (x - x_prev).abs() < QUANTILE_TOL / 4.0 || g1 == g0 {
            let gx = g(&e);
            if gx == 0.0 {
                return (x, e);
            }
            let h = QUANTILE_TOL / 2.0;
            let probe = if gx < 0.0 { x + h } else { x - h };
            if (0.0..=QUANTILE_UPPER).contains(&probe) {
                let ep = prob(probe);
                if (g(&ep) >= 0.0) != (gx >= 0.0) || g(&ep) == 0.0 {
                    return (x, e);
                }
            }
            break;
        }
    }
    // bisection fallback
    let (mut lo, mut hi) = (0.0, QUANTILE_UPPER);
    let mut e_lo = prob(lo);
    if g(&e_lo) >= 0.0 {
        return (lo, e_lo);
    }
    let mut e_hi = prob(hi);
    while hi - lo > QUANTILE_TOL {
        let mid = 0.5 * (lo + hi);
        let em = prob(mid);
        if g(&em) < 0.0 {
            (lo, e_lo) = (mid, em);
        } else {
            (hi, e_hi) = (mid, em);
        }
    }
    if g(&e_hi).abs() < g(&e_lo).abs() {
        (hi, e_hi)
    } else {
        (lo, e_lo)
    }
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes
            .iter()
            .take_while(|&&p| p * p <= c)
            .all(|&p| !c.is_multiple_of(p))
        {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

/// Rectangle probabilities for one correlation matrix.
#[derive(Debug, Clone)]
pub struct Mvn {
    corr: Matrix<f64>,
    config: MvnConfig,
    generator: Vec<f64>,
    shifts: Vec<Vec<f64>>,
    /// Variable orderings for equicoordinate limits (one-sided, two-sided),
    /// fixed at a reference limit so probabilities vary smoothly with `b`.
    equi_factors: [Factor; 2],
}

impl Mvn {
    pub fn new<T: Real>(corr: &Matrix<T>, config: MvnConfig) -> Result<Self> {
        if !(config.abs_tol > 0.0) || config.shifts < 2 || config.initial_points == 0 {
            return Err(TrendError::validation("invalid integration settings"));
        }
        let corr = repair_correlation(corr)?;
        let dims = corr.nrows().saturating_sub(1);
        let generator = first_primes(dims)
            .into_iter()
            .map(|p| (p as f64).sqrt().fract())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let shifts = (0..config.shifts)
            .map(|_| (0..dims).map(|_| rng.random::<f64>()).collect())
            .collect();
        let m = corr.nrows();
        let reference = |lower: f64| Factor::prioritized(&corr, &vec![lower; m], &vec![EQUI_REFERENCE; m]);
        let equi_factors = [reference(f64::NEG_INFINITY), reference(-EQUI_REFERENCE)];
        Ok(Mvn {
            corr,
            config,
            generator,
            shifts,
            equi_factors,
        })
    }

    pub fn dim(&self) -> usize {
        self.corr.nrows()
    }

    pub fn correlation(&self) -> &Matrix<f64> {
        &self.corr
    }

    /// `P(lower < Z < upper)`; limits may be infinite.
    pub fn rectangle(&self, lower: &[f64], upper: &[f64]) -> Result<MvnEstimate> {
        self.check_limits(lower, upper)?;
        if let Some(est) = self.trivial(lower, upper) {
            return Ok(est);
        }
        let factor = Factor::prioritized(&self.corr, lower, upper);
        self.adaptive(&factor, lower, upper)
    }

    /// `P(Z_i <= b for all i)`, or `P(|Z_i| <= b for all i)` when two-sided.
    pub fn equicoordinate(&self, b: f64, two_sided: bool) -> Result<MvnEstimate> {
        let (lower, upper) = self.equi_limits(b, two_sided);
        self.check_limits(&lower, &upper)?;
        if let Some(est) = self.trivial(&lower, &upper) {
            return Ok(est);
        }
        self.adaptive(&self.equi_factors[usize::from(two_sided)], &lower, &upper)
    }

    /// `q` with `P(Z_i <= q for all i) = level` (or the two-sided analogue)
    /// on `[0, 10]`, to 1e-6. A coarse bisection at a loose tolerance locates
    /// `q`; the ordering and point budget are then frozen so the probability
    /// is a continuous function of `q`, and the bracket around it is refined
    /// by regula falsi (Illinois variant) with interleaved bisection steps.
    pub fn equicoordinate_quantile(&self, level: f64, two_sided: bool) -> Result<(f64, MvnEstimate)> {
        if !(level > 0.0 && level < 1.0) {
            return Err(TrendError::validation(format!("level {level} outside (0, 1)")));
        }
        if self.dim() == 1 {
            let q = if two_sided {
                normal_quantile(0.5 + 0.5 * level)
            } else {
                normal_quantile(level)
            };
            let est = self.equicoordinate(q, two_sided)?;
            return Ok((q, est));
        }
        let factor = &self.equi_factors[usize::from(two_sided)];
        let loose = (10.0 * self.config.abs_tol).max(1e-3);
        let (mut lo, mut hi) = (0.0, QUANTILE_UPPER);
        while hi - lo > 1e-3 {
            let mid = 0.5 * (lo + hi);
            let (a, b) = self.equi_limits(mid, two_sided);
            if self.trivial(&a, &b).is_some() || self.adaptive_to(factor, &a, &b, loose)?.value < level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut q = 0.5 * (lo + hi);
        let mut start = self.equicoordinate(q, two_sided)?;
        for _ in 0..3 {
            let n = start.points_per_shift;
            let frozen = |b: f64| {
                let (lo, hi) = self.equi_limits(b, two_sided);
                match self.trivial(&lo, &hi) {
                    Some(est) => (est, Some(n)),
                    None => self.fixed(factor, &lo, &hi, n),
                }
            };
            let (root, (est, stop)) = refine_root(q, (start, Some(n)), frozen, level);
            q = root;
            match stop {
                // a fresh adaptive evaluation at `q` reproduces `est` exactly
                Some(s) if s == n => return Ok((q, est)),
                _ => start = self.equicoordinate(q, two_sided)?,
            }
        }
        Ok((q, start))
    }

    fn equi_limits(&self, b: f64, two_sided: bool) -> (Vec<f64>, Vec<f64>) {
        let m = self.dim();
        let lower = if two_sided { -b } else { f64::NEG_INFINITY };
        (vec![lower; m], vec![b; m])
    }

    fn check_limits(&self, lower: &[f64], upper: &[f64]) -> Result<()> {
        if lower.len() != self.dim() || upper.len() != self.dim() {
            return Err(TrendError::validation("limits do not match the dimension"));
        }
        if lower.iter().chain(upper).any(|v| v.is_nan()) {
            return Err(TrendError::validation("NaN integration limit"));
        }
        Ok(())
    }

    fn trivial(&self, lower: &[f64], upper: &[f64]) -> Option<MvnEstimate> {
        let exact = |value: f64| MvnEstimate {
            value,
            error: 0.0,
            points_per_shift: 0,
        };
        if lower.iter().zip(upper).any(|(a, b)| a >= b) {
            return Some(exact(0.0));
        }
        if self.dim() == 1 {
            return Some(exact(normal_cdf(upper[0]) - normal_cdf(lower[0])));
        }
        None
    }

    fn adaptive(&self, factor: &Factor, lower: &[f64], upper: &[f64]) -> Result<MvnEstimate> {
        self.adaptive_to(factor, lower, upper, self.config.abs_tol)
    }

    fn adaptive_to(&self, factor: &Factor, lower: &[f64], upper: &[f64], tol: f64) -> Result<MvnEstimate> {
        let (a, b) = factor.limits(lower, upper);
        let s = self.config.shifts;
        let mut per_shift = (self.config.initial_points / s).max(1);
        let mut done = 0;
        let mut sums = vec![0.0; s];
        loop {
            self.accumulate(factor, &a, &b, done, per_shift, &mut sums);
            done = per_shift;
            let est = self.summarize(&sums, per_shift);
            if est.error <= tol {
                return Ok(est);
            }
            if 2 * per_shift * s > self.config.max_points {
                return Err(TrendError::IntegrationTolerance {
                    achieved: est.error,
                    tolerance: tol,
                });
            }
            per_shift *= 2;
        }
    }

    /// Estimate with exactly `per_shift` points per shift, accumulated in
    /// the same rounds as [`Self::adaptive`] so the sums agree bitwise. Also
    /// returns the budget at which the adaptive rule would have stopped, if
    /// that is at most `per_shift`.
    fn fixed(&self, factor: &Factor, lower: &[f64], upper: &[f64], per_shift: usize) -> (MvnEstimate, Option<usize>) {
        let (a, b) = factor.limits(lower, upper);
        let mut sums = vec![0.0; self.config.shifts];
        let mut done = 0;
        let mut n = (self.config.initial_points / self.config.shifts).max(1);
        let mut stop = None;
        loop {
            let upto = n.min(per_shift);
            self.accumulate(factor, &a, &b, done, upto, &mut sums);
            done = upto;
            let est = self.summarize(&sums, upto);
            if stop.is_none() && est.error <= self.config.abs_tol {
                stop = Some(upto);
            }
            if upto >= per_shift {
                return (est, stop);
            }
            n *= 2;
        }
    }

    /// Adds lattice points `from+1 ..= to` of every shift to `sums`. Each
    /// point is used together with its antithetic image.
    fn accumulate(&self, factor: &Factor, a: &[f64], b: &[f64], from: usize, to: usize, sums: &mut [f64]) {
        const PAIRS: usize = LANES / 2;
        let dims = self.dim() - 1;
        let mut w = vec![[0.0; LANES]; dims];
        let mut y = vec![[0.0; LANES]; self.dim()];
        for (shift, sum) in self.shifts.iter().zip(sums.iter_mut()) {
            let mut acc = 0.0;
            let mut n = from + 1;
            while n <= to {
                let active = PAIRS.min(to + 1 - n);
                for (j, wj) in w.iter_mut().enumerate() {
                    for p in 0..PAIRS {
                        // inactive lanes repeat the last point and are ignored
                        let idx = n + p.min(active - 1);
                        let x = (idx as f64 * self.generator[j] + shift[j]).fract();
                        let t = (2.0 * x - 1.0).abs();
                        wj[2 * p] = t;
                        wj[2 * p + 1] = 1.0 - t;
                    }
                }
                let f = factor.integrand(a, b, &w, &mut y);
                for p in 0..active {
                    acc += 0.5 * (f[2 * p] + f[2 * p + 1]);
                }
                n += active;
            }
            *sum += acc;
        }
    }

    fn summarize(&self, sums: &[f64], per_shift: usize) -> MvnEstimate {
        let s = sums.len() as f64;
        let means: Vec<f64> = sums.iter().map(|v| v / per_shift as f64).collect();
        let value = means.iter().sum::<f64>() / s;
        let var = means.iter().map(|m| (m - value) * (m - value)).sum::<f64>() / (s - 1.0);
        MvnEstimate {
            value: value.clamp(0.0, 1.0),
            error: ERROR_FACTOR * (var / s).sqrt(),
            points_per_shift: per_shift,
        }
    }
}
