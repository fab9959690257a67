//! Binomial generalised linear models fitted by iteratively reweighted least
//! squares, with per-unit score contributions for sandwich covariances.
//!
//! An observational unit carries `successes` out of `trials`, a prior weight
//! and a multiplicity. The multiplicity counts identical replicate units: it
//! enters the likelihood like a prior weight, but replicates contribute to
//! the sandwich "meat" individually (`f * s s'`), not as one aggregated score
//! (`(f s)(f s)'`). Grouped tables are represented as two Bernoulli unit
//! types per dose group (tumor / tumor-free) with their counts as multiplicity.

use crate::data::Link;
use crate::error::{Result, TrendError};
use crate::linalg::{cholesky_solve, dot, Matrix};
use crate::scalar::Real;

const MAX_ITERATIONS: usize = 50;
const MAX_HALVINGS: usize = 30;
const BOUNDARY: f64 = 1e-10;

impl Link {
    pub fn eta<T: Real>(self, mu: T) -> T {
        match self {
            Link::Logit => (mu / (T::one() - mu)).ln(),
            Link::Identity => mu,
            Link::Log => mu.ln(),
        }
    }

    pub fn mu<T: Real>(self, eta: T) -> T {
        match self {
            Link::Logit => T::one() / (T::one() + (-eta).exp()),
            Link::Identity => eta,
            Link::Log => eta.exp(),
        }
    }

    /// `dmu/deta` evaluated at the mean.
    pub fn mu_eta<T: Real>(self, mu: T) -> T {
        match self {
            Link::Logit => mu * (T::one() - mu),
            Link::Identity => T::one(),
            Link::Log => mu,
        }
    }

    fn admissible<T: Real>(self, mu: T) -> bool {
        match self {
            Link::Logit => mu > T::zero() && mu < T::one(),
            Link::Identity | Link::Log => {
                let b = T::lit(BOUNDARY);
                mu >= b && mu <= T::one() - b
            }
        }
    }
}

/// Model matrix with column labels; must have full column rank.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T> {
    matrix: Matrix<T>,
    labels: Vec<String>,
}

impl<T: Real> DesignMatrix<T> {
    pub fn new(matrix: Matrix<T>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != matrix.ncols() {
            return Err(TrendError::validation("one label per design column required"));
        }
        if matrix.nrows() < matrix.ncols() {
            return Err(TrendError::RankDeficient);
        }
        let design = DesignMatrix { matrix, labels };
        let (std, _) = design.standardized();
        let ones = vec![T::one(); std.nrows()];
        std.weighted_crossprod(&ones)
            .cholesky()
            .map_err(|_| TrendError::RankDeficient)?;
        Ok(design)
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_units(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.matrix.ncols()
    }

    /// Returns `(X A, A)` where every non-indicator column is mapped onto
    /// [0,1] (min-max when an intercept is present, max-abs otherwise) and
    /// `A` converts standardized coefficients back: `theta = A theta_std`.
    fn standardized(&self) -> (Matrix<T>, Matrix<T>) {
        let x = &self.matrix;
        let p = x.ncols();
        let col = |j: usize| x.column(j);
        let intercept = (0..p).find(|&j| col(j).iter().all(|&v| v == T::one()));
        let mut a = Matrix::identity(p);
        for j in 0..p {
            if Some(j) == intercept {
                continue;
            }
            let c = col(j);
            if c.iter().all(|&v| v == T::zero() || v == T::one()) {
                continue;
            }
            let lo = c.iter().fold(T::infinity(), |m, &v| m.min(v));
            let hi = c.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            match intercept {
                Some(i) if hi > lo => {
                    let range = hi - lo;
                    a[(j, j)] = T::one() / range;
                    a[(i, j)] = -lo / range;
                }
                _ => {
                    let scale = lo.abs().max(hi.abs());
                    if scale > T::zero() {
                        a[(j, j)] = T::one() / scale;
                    }
                }
            }
        }
        (x.matmul(&a), a)
    }
}

/// Binomial responses for each observational unit.
#[derive(Debug, Clone, PartialEq)]
pub struct BinomialData<T> {
    pub successes: Vec<T>,
    pub trials: Vec<T>,
    pub prior_weights: Vec<T>,
    pub multiplicity: Vec<T>,
}

impl<T: Real> BinomialData<T> {
    pub fn new(successes: Vec<T>, trials: Vec<T>, prior_weights: Vec<T>) -> Self {
        let n = successes.len();
        BinomialData {
            successes,
            trials,
            prior_weights,
            multiplicity: vec![T::one(); n],
        }
    }

    pub fn with_multiplicity(mut self, multiplicity: Vec<T>) -> Self {
        self.multiplicity = multiplicity;
        self
    }

    pub fn len(&self) -> usize {
        self.successes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.successes.is_empty()
    }

    fn validate(&self, n_units: usize) -> Result<()> {
        let lens = [
            self.successes.len(),
            self.trials.len(),
            self.prior_weights.len(),
            self.multiplicity.len(),
        ];
        if lens.iter().any(|&l| l != n_units) {
            return Err(TrendError::validation(format!(
                "response vectors {lens:?} do not match {n_units} design rows"
            )));
        }
        for u in 0..n_units {
            let (y, m) = (self.successes[u], self.trials[u]);
            if !(m > T::zero()) {
                return Err(TrendError::validation(format!("unit {u}: trials must be positive")));
            }
            if !(y >= T::zero() && y <= m) {
                return Err(TrendError::validation(format!(
                    "unit {u}: successes outside [0, trials]"
                )));
            }
            if !(self.prior_weights[u] >= T::zero()) || !(self.multiplicity[u] >= T::zero()) {
                return Err(TrendError::validation(format!("unit {u}: negative weight")));
            }
        }
        Ok(())
    }

    fn effective_weight(&self, u: usize) -> T {
        self.prior_weights[u] * self.multiplicity[u]
    }
}

/// A binomial GLM: design, responses and link.
#[derive(Debug, Clone, Copy)]
pub struct BinomialModel<'a, T> {
    pub design: &'a DesignMatrix<T>,
    pub data: &'a BinomialData<T>,
    pub link: Link,
}

impl<'a, T: Real> BinomialModel<'a, T> {
    pub fn new(design: &'a DesignMatrix<T>, data: &'a BinomialData<T>, link: Link) -> Self {
        BinomialModel { design, data, link }
    }

    fn means(&self, x: &Matrix<T>, theta: &[T]) -> Vec<T> {
        x.mul_vec(theta).into_iter().map(|eta| self.link.mu(eta)).collect()
    }

    /// Weighted binomial log-likelihood (kernel, without binomial coefficients).
    pub fn log_likelihood(&self, theta: &[T]) -> T {
        let mu = self.means(self.design.matrix(), theta);
        let d = self.data;
        (0..d.len())
            .map(|u| {
                let e = d.effective_weight(u);
                if e == T::zero() {
                    return T::zero();
                }
                let (y, m) = (d.successes[u], d.trials[u]);
                e * (xlogy(y, mu[u]) + xlogy(m - y, T::one() - mu[u]))
            })
            .sum()
    }

    /// Score contribution of a single replicate of every unit (units x params).
    pub fn unit_scores(&self, theta: &[T]) -> Matrix<T> {
        let x = self.design.matrix();
        let mu = self.means(x, theta);
        self.unit_scores_at(x, &mu)
    }

    fn unit_scores_at(&self, x: &Matrix<T>, mu: &[T]) -> Matrix<T> {
        let d = self.data;
        Matrix::from_fn(x.nrows(), x.ncols(), |u, j| {
            let (y, m, w) = (d.successes[u], d.trials[u], d.prior_weights[u]);
            let v = mu[u] * (T::one() - mu[u]);
            x[(u, j)] * w * (y - m * mu[u]) * self.link.mu_eta(mu[u]) / v
        })
    }

    /// Gradient of [`Self::log_likelihood`]: multiplicity-weighted column sums of the unit scores.
    pub fn score(&self, theta: &[T]) -> Vec<T> {
        let s = self.unit_scores(theta);
        column_sums(&s, &self.data.multiplicity)
    }

    pub fn deviance_at(&self, mu: &[T]) -> T {
        let d = self.data;
        let two = T::lit(2.0);
        (0..d.len())
            .map(|u| {
                let e = d.effective_weight(u);
                if e == T::zero() {
                    return T::zero();
                }
                let (y, m) = (d.successes[u], d.trials[u]);
                let fit = m * mu[u];
                two * e * (xlogy(y, y / fit) + xlogy(m - y, (m - y) / (m - fit)))
            })
            .sum()
    }

    pub fn fit(&self) -> Result<FittedModel<T>> {
        fit_binomial(self.design, self.data, self.link)
    }
}

/// `x ln y` with the convention `0 ln 0 = 0`.
fn xlogy<T: Real>(x: T, y: T) -> T {
    if x == T::zero() {
        T::zero()
    } else {
        x * y.ln()
    }
}

pub(crate) fn column_sums<T: Real>(s: &Matrix<T>, weights: &[T]) -> Vec<T> {
    (0..s.ncols())
        .map(|j| (0..s.nrows()).map(|u| weights[u] * s[(u, j)]).sum())
        .collect()
}

/// Result of a converged binomial GLM fit, on the original covariate scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel<T> {
    pub coefficients: Vec<T>,
    pub labels: Vec<String>,
    /// Inverse of [`Self::information`].
    pub vcov_model: Matrix<T>,
    /// `X' W X` at convergence.
    pub information: Matrix<T>,
    /// Per-replicate score contributions at the estimate (units x params).
    pub score_matrix: Matrix<T>,
    pub multiplicity: Vec<T>,
    pub fitted: Vec<T>,
    pub n_units: usize,
    pub link: Link,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: T,
}

impl<T: Real> FittedModel<T> {
    pub fn n_params(&self) -> usize {
        self.coefficients.len()
    }

    /// Multiplicity-weighted column sums of the score matrix; zero at the MLE.
    pub fn score_sums(&self) -> Vec<T> {
        column_sums(&self.score_matrix, &self.multiplicity)
    }

    /// `I^-1 (S' F S) I^-1`, the robust covariance of this model alone.
    pub fn sandwich(&self) -> Matrix<T> {
        let meat = self.score_matrix.weighted_crossprod(&self.multiplicity);
        self.vcov_model.matmul(&meat).matmul(&self.vcov_model)
    }
}

/// Fits a binomial GLM by IRLS.
///
/// Working response `z = eta + (y/m - mu) / mu'` and working weight
/// `w m mu'^2 / (mu (1 - mu))`; stops when the relative deviance change
/// drops below 1e-10 (or what the scalar type can resolve). For identity and
/// log links each step is halved (up to 30 times) until every fitted mean is
/// inside `[1e-10, 1 - 1e-10]`.
pub fn fit_binomial<T: Real>(design: &DesignMatrix<T>, data: &BinomialData<T>, link: Link) -> Result<FittedModel<T>> {
    let n = design.n_units();
    let p = design.n_params();
    data.validate(n)?;
    let model = BinomialModel { design, data, link };
    let (xs, a) = design.standardized();
    let tol = T::reachable_tol(1e-10);
    let half = T::lit(0.5);

    let mut mu: Vec<T> = (0..n)
        .map(|u| (data.successes[u] + half) / (data.trials[u] + T::one()))
        .collect();
    if link == Link::Log {
        // start inside the admissible region of the log link as well
        mu.iter_mut().for_each(|m| *m = m.min(T::lit(0.9)));
    }
    let mut eta: Vec<T> = mu.iter().map(|&m| link.eta(m)).collect();
    let mut dev_old = model.deviance_at(&mu);
    let mut beta_prev: Option<Vec<T>> = None;
    let mut beta = vec![T::zero(); p];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=MAX_ITERATIONS {
        iterations = iter;
        let mut w = vec![T::zero(); n];
        let mut z = vec![T::zero(); n];
        for u in 0..n {
            let d = link.mu_eta(mu[u]);
            let v = mu[u] * (T::one() - mu[u]);
            z[u] = eta[u] + (data.successes[u] / data.trials[u] - mu[u]) / d;
            w[u] = data.effective_weight(u) * data.trials[u] * d * d / v;
        }
        let xtwx = xs.weighted_crossprod(&w);
        let chol = xtwx.cholesky().map_err(|_| {
            if iter == 1 {
                TrendError::RankDeficient
            } else {
                TrendError::SingularInformation
            }
        })?;
        let wz: Vec<T> = w.iter().zip(&z).map(|(&a, &b)| a * b).collect();
        let rhs = xs.transpose().mul_vec(&wz);
        let mut candidate = cholesky_solve(&chol, &rhs);

        let admissible = |b: &[T]| -> Option<(Vec<T>, Vec<T>, T)> {
            let e = xs.mul_vec(b);
            let m: Vec<T> = e.iter().map(|&x| link.mu(x)).collect();
            if !m.iter().all(|&x| link.admissible(x)) {
                return None;
            }
            let dev = model.deviance_at(&m);
            dev.is_finite().then_some((e, m, dev))
        };

        let mut accepted = admissible(&candidate);
        if accepted.is_none() {
            let anchor = match &beta_prev {
                Some(b) => b.clone(),
                None => feasible_start(&xs, data, link)?,
            };
            for _ in 0..MAX_HALVINGS {
                candidate = candidate.iter().zip(&anchor).map(|(&c, &b)| (c + b) * half).collect();
                accepted = admissible(&candidate);
                if accepted.is_some() {
                    break;
                }
            }
        }
        let (e, m, dev) = accepted.ok_or(TrendError::LinkBoundary)?;
        beta = candidate;
        eta = e;
        mu = m;
        let change = (dev - dev_old).abs() / (dev.abs() + T::lit(0.1));
        dev_old = dev;
        if change < tol {
            converged = true;
            break;
        }
        beta_prev = Some(beta.clone());
    }
    if !converged {
        let coefficients = a.mul_vec(&beta).into_iter().map(|c| c.as_f64()).collect();
        return Err(TrendError::NonConvergence {
            iterations,
            coefficients,
        });
    }

    let w: Vec<T> = (0..n)
        .map(|u| {
            let d = link.mu_eta(mu[u]);
            data.effective_weight(u) * data.trials[u] * d * d / (mu[u] * (T::one() - mu[u]))
        })
        .collect();
    let info_std = xs.weighted_crossprod(&w);
    let vcov_std = info_std.spd_inverse()?;
    let scores_std = model.unit_scores_at(&xs, &mu);

    // back to the original covariate scale
    let a_inv = a.inverse()?;
    let coefficients = a.mul_vec(&beta);
    let mut vcov_model = a.matmul(&vcov_std).matmul(&a.transpose());
    vcov_model.symmetrize();
    let mut information = a_inv.transpose().matmul(&info_std).matmul(&a_inv);
    information.symmetrize();
    let score_matrix = scores_std.matmul(&a_inv);

    Ok(FittedModel {
        coefficients,
        labels: design.labels().to_vec(),
        vcov_model,
        information,
        score_matrix,
        multiplicity: data.multiplicity.clone(),
        fitted: mu,
        n_units: n,
        link,
        converged,
        iterations,
        deviance: dev_old,
    })
}

/// Coefficients reproducing a constant linear predictor at the pooled mean,
/// used as the halving anchor when the very first IRLS step is inadmissible.
fn feasible_start<T: Real>(xs: &Matrix<T>, data: &BinomialData<T>, link: Link) -> Result<Vec<T>> {
    let (mut num, mut den) = (T::zero(), T::zero());
    for u in 0..data.len() {
        let e = data.effective_weight(u);
        num += e * data.successes[u];
        den += e * data.trials[u];
    }
    let b = T::lit(1e-3);
    let pooled = (num / den).max(b).min(T::one() - b);
    let target = vec![link.eta(pooled); xs.nrows()];
    let ones = vec![T::one(); xs.nrows()];
    let chol = xs
        .weighted_crossprod(&ones)
        .cholesky()
        .map_err(|_| TrendError::RankDeficient)?;
    let start = cholesky_solve(&chol, &xs.transpose().mul_vec(&target));
    let ok = xs.mul_vec(&start).into_iter().all(|e| link.admissible(link.mu(e)));
    if ok {
        Ok(start)
    } else {
        Err(TrendError::LinkBoundary)
    }
}

/// Studentized linear combination `c' theta / sqrt(c' V c)`.
pub fn wald_statistic<T: Real>(model: &FittedModel<T>, weights: &[T], vcov: &Matrix<T>) -> Result<T> {
    if weights.len() != model.n_params() || vcov.nrows() != weights.len() || !vcov.is_square() {
        return Err(TrendError::validation(
            "contrast and covariance not conformable with the model",
        ));
    }
    let var = vcov.quadratic_form(weights);
    if !(var > T::zero()) {
        return Err(TrendError::DegenerateVariance);
    }
    Ok(dot(weights, &model.coefficients) / var.sqrt())
}
