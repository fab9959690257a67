//! Joint covariance of a family of marginal models and the max-test built
//! on it.

use serde::{Deserialize, Serialize};

use crate::data::{Alternative, AnalysisConfig, Link};
use crate::error::{Result, TrendError};
use crate::family::{MarginalModelFamily, MemberKind};
use crate::linalg::Matrix;
use crate::mvn::{normal_cdf, normal_sf, Mvn, MvnConfig};
use crate::scalar::Real;

/// Sandwich covariance of all stacked coefficients: block `(m, l)` is
/// `I_m^-1 (S_m' F S_l) I_l^-1` with `F` the unit multiplicities.
pub fn joint_covariance<T: Real>(family: &MarginalModelFamily<T>) -> Result<Matrix<T>> {
    let n = family.n_units;
    let f = &family
        .models
        .first()
        .ok_or_else(|| TrendError::validation("family has no models"))?
        .fit
        .multiplicity;
    let mut blocks = Vec::with_capacity(family.models.len());
    for m in &family.models {
        if m.fit.score_matrix.nrows() != n {
            return Err(TrendError::UnitMismatch {
                expected: n,
                found: m.fit.score_matrix.nrows(),
            });
        }
        blocks.push(m.fit.score_matrix.matmul(&m.fit.vcov_model));
    }
    let p = family.n_stacked_params();
    let offsets = family.offsets();
    let mut v = Matrix::zeros(p, p);
    for (a, pa) in blocks.iter().enumerate() {
        for (b, pb) in blocks.iter().enumerate().skip(a) {
            for i in 0..pa.ncols() {
                for j in 0..pb.ncols() {
                    let mut s = T::zero();
                    for u in 0..n {
                        s += f[u] * pa[(u, i)] * pb[(u, j)];
                    }
                    v[(offsets[a] + i, offsets[b] + j)] = s;
                    v[(offsets[b] + j, offsets[a] + i)] = s;
                }
            }
        }
    }
    Ok(v)
}

/// Covariance of the tested functionals `c_i' theta_{m(i)}`.
pub fn functional_covariance<T: Real>(family: &MarginalModelFamily<T>) -> Result<Matrix<T>> {
    let v = joint_covariance(family)?;
    let offsets = family.offsets();
    let p = family.n_stacked_params();
    let stacked: Vec<Vec<T>> = family
        .members
        .iter()
        .map(|mem| {
            let mut c = vec![T::zero(); p];
            c[offsets[mem.model]..offsets[mem.model] + mem.functional.len()].copy_from_slice(&mem.functional);
            c
        })
        .collect();
    let m = stacked.len();
    let vc: Vec<Vec<T>> = stacked.iter().map(|c| v.mul_vec(c)).collect();
    Ok(Matrix::from_fn(m, m, |i, j| crate::linalg::dot(&stacked[i], &vc[j])))
}

/// Max-test results for one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointInference<T> {
    pub labels: Vec<String>,
    pub kinds: Vec<MemberKind>,
    /// `c' theta` on the linear-predictor scale.
    pub estimates: Vec<T>,
    pub std_errors: Vec<T>,
    /// `estimate / se`.
    pub statistics: Vec<T>,
    pub correlation: Vec<Vec<T>>,
    pub unadjusted_p: Vec<T>,
    pub adjusted_p: Vec<T>,
    pub critical_value: T,
    pub lower_bounds: Vec<Option<T>>,
    pub upper_bounds: Vec<Option<T>>,
    pub alternative: Alternative,
    pub confidence_level: f64,
    pub link: Link,
    /// Largest error estimate over all probabilities computed.
    pub mvn_error: f64,
}

impl<T: Real> JointInference<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Index of the smallest adjusted p-value (first on ties).
    pub fn most_likely_shape(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.adjusted_p.iter().enumerate() {
            if p < self.adjusted_p[best] {
                best = i;
            }
        }
        best
    }

    /// Max-test p-value, the smallest adjusted p-value.
    pub fn max_test_p(&self) -> T {
        self.adjusted_p[self.most_likely_shape()]
    }

    pub fn correlation_matrix(&self) -> Matrix<T> {
        Matrix::from_rows(&self.correlation)
    }
}

/// Runs the max-test over all members of `family`.
pub fn test_family<T: Real>(family: &MarginalModelFamily<T>, cfg: &AnalysisConfig) -> Result<JointInference<T>> {
    cfg.validate()?;
    let link = family.models[0].fit.link;
    let cov = functional_covariance(family)?;
    let m = family.len();
    let mut estimates = Vec::with_capacity(m);
    let mut std_errors = Vec::with_capacity(m);
    for (i, mem) in family.members.iter().enumerate() {
        let est = crate::linalg::dot(&mem.functional, &family.models[mem.model].fit.coefficients);
        let var = cov[(i, i)];
        if !(var > T::zero()) || !var.is_finite() {
            return Err(TrendError::DegenerateVariance.in_member(&mem.label));
        }
        estimates.push(est);
        std_errors.push(var.sqrt());
    }
    let statistics: Vec<T> = estimates.iter().zip(&std_errors).map(|(&e, &s)| e / s).collect();
    let corr = Matrix::from_fn(m, m, |i, j| {
        if i == j {
            T::one()
        } else {
            cov[(i, j)] / (std_errors[i] * std_errors[j])
        }
    });

    let mvn = Mvn::new(&corr, MvnConfig::new(cfg.mvn_abs_tol, cfg.mvn_seed))?;
    let two_sided = cfg.alternative == Alternative::TwoSided;
    let directional = |t: f64| match cfg.alternative {
        Alternative::Greater => t,
        Alternative::Less => -t,
        Alternative::TwoSided => t.abs(),
    };
    let mut mvn_error: f64 = 0.0;
    let mut unadjusted_p = Vec::with_capacity(m);
    let mut adjusted_p = Vec::with_capacity(m);
    for &t in &statistics {
        let b = directional(t.as_f64());
        let single = if two_sided { 2.0 * normal_sf(b) } else { normal_sf(b) };
        let est = mvn.equicoordinate(b, two_sided)?;
        mvn_error = mvn_error.max(est.error);
        unadjusted_p.push(T::lit(single.min(1.0)));
        adjusted_p.push(T::lit((1.0 - est.value).clamp(0.0, 1.0)));
    }
    let (q, q_est) = mvn.equicoordinate_quantile(cfg.confidence_level, two_sided)?;
    mvn_error = mvn_error.max(q_est.error);
    let critical_value = T::lit(q);

    let margin = |i: usize| critical_value * std_errors[i];
    let lower_bounds = (0..m)
        .map(|i| (cfg.alternative != Alternative::Less).then(|| estimates[i] - margin(i)))
        .collect();
    let upper_bounds = (0..m)
        .map(|i| (cfg.alternative != Alternative::Greater).then(|| estimates[i] + margin(i)))
        .collect();

    Ok(JointInference {
        labels: family.labels(),
        kinds: family.members.iter().map(|mem| mem.kind).collect(),
        estimates,
        std_errors,
        statistics,
        correlation: corr.to_rows(),
        unadjusted_p,
        adjusted_p,
        critical_value,
        lower_bounds,
        upper_bounds,
        alternative: cfg.alternative,
        confidence_level: cfg.confidence_level,
        link,
        mvn_error,
    })
}

/// One-sided normal p-value of a single statistic in the given direction.
pub fn single_p(t: f64, alternative: Alternative) -> f64 {
    match alternative {
        Alternative::Greater => normal_sf(t),
        Alternative::Less => normal_cdf(t),
        Alternative::TwoSided => (2.0 * normal_sf(t.abs())).min(1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_pseudo_counts, parse_grouped_csv, PseudoCount, Scaling};
    use crate::family::{build_family, UnitData};

    const ACRYLAMIDE: &str = "dose,events,n\n0,0,46\n0.0875,2,45\n0.175,2,46\n0.35,6,47\n0.70,6,44\n";

    fn units(text: &str) -> UnitData<f64> {
        let t = parse_grouped_csv(text).unwrap();
        UnitData::from_table(&apply_pseudo_counts(&t, PseudoCount::Add2).unwrap())
    }

    #[test]
    fn single_saturated_model_sandwich_equals_model_covariance() {
        let cfg = AnalysisConfig {
            scalings: vec![],
            ..AnalysisConfig::default()
        };
        let fam = build_family(&units(ACRYLAMIDE), &cfg).unwrap();
        let v = joint_covariance(&fam).unwrap();
        let model = &fam.models[0].fit.vcov_model;
        for i in 0..5 {
            for j in 0..5 {
                let scale = model[(i, i)].max(model[(j, j)]);
                assert!((v[(i, j)] - model[(i, j)]).abs() <= 1e-6 * scale);
            }
        }
    }

    #[test]
    fn duplicated_member_is_perfectly_correlated() {
        let cfg = AnalysisConfig {
            scalings: vec![Scaling::Arithmetic],
            include_williams: false,
            ..AnalysisConfig::default()
        };
        let fam = build_family(&units(ACRYLAMIDE), &cfg).unwrap();
        let mut models = fam.models.clone();
        models.push(fam.models[0].clone());
        let mut second = fam.members[0].clone();
        second.model = 1;
        second.label = "copy".into();
        let dup = MarginalModelFamily::new(models, vec![fam.members[0].clone(), second]).unwrap();
        let v = joint_covariance(&dup).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((v[(i, j + 2)] - v[(i, j)]).abs() <= 1e-12 * v[(i, i)].abs().max(1.0));
            }
        }
        let single = test_family(&fam, &cfg).unwrap();
        let double = test_family(&dup, &cfg).unwrap();
        assert!((double.correlation[0][1] - 1.0).abs() < 1e-10);
        assert!((double.adjusted_p[0] - single.adjusted_p[0]).abs() <= cfg.mvn_abs_tol);
    }

    #[test]
    fn one_member_family_has_no_adjustment() {
        let cfg = AnalysisConfig {
            scalings: vec![Scaling::Ordinal],
            include_williams: false,
            ..AnalysisConfig::default()
        };
        let res = test_family(&build_family(&units(ACRYLAMIDE), &cfg).unwrap(), &cfg).unwrap();
        assert!((res.adjusted_p[0] - res.unadjusted_p[0]).abs() < 1e-12);
        assert!((res.critical_value - 1.644854).abs() < 1e-5);
    }

    #[test]
    fn acrylamide_family_is_internally_consistent() {
        let cfg = AnalysisConfig::default();
        let res = test_family(&build_family(&units(ACRYLAMIDE), &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(res.len(), 7);
        let r = res.correlation_matrix();
        assert!(r.symmetric_eigen().0[0] >= -1e-8);
        assert!(r[(0, 1)] > 0.9 && r[(0, 1)] < 1.0);
        let m = res.len() as f64;
        for i in 0..res.len() {
            assert!(res.adjusted_p[i] >= res.unadjusted_p[i] - cfg.mvn_abs_tol);
            assert!(res.adjusted_p[i] <= (m * res.unadjusted_p[i]).min(1.0) + cfg.mvn_abs_tol);
            let rejected = res.adjusted_p[i] <= 0.05;
            assert_eq!(rejected, res.lower_bounds[i].unwrap() > 0.0, "{}", res.labels[i]);
            assert!(res.upper_bounds[i].is_none());
        }
    }

    #[test]
    fn less_mirrors_greater() {
        let greater = AnalysisConfig::default();
        let less = AnalysisConfig {
            alternative: Alternative::Less,
            ..AnalysisConfig::default()
        };
        let fam = build_family(&units(ACRYLAMIDE), &greater).unwrap();
        let g = test_family(&fam, &greater).unwrap();
        let mut flipped = fam.clone();
        flipped
            .members
            .iter_mut()
            .for_each(|m| m.functional.iter_mut().for_each(|c| *c = -*c));
        let l = test_family(&flipped, &less).unwrap();
        for i in 0..g.len() {
            assert!((g.adjusted_p[i] - l.adjusted_p[i]).abs() < 1e-12);
            assert!((g.lower_bounds[i].unwrap() + l.upper_bounds[i].unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn two_sided_doubles_small_p() {
        let cfg = AnalysisConfig {
            scalings: vec![Scaling::Arithmetic],
            include_williams: false,
            alternative: Alternative::TwoSided,
            ..AnalysisConfig::default()
        };
        let res = test_family(&build_family(&units(ACRYLAMIDE), &cfg).unwrap(), &cfg).unwrap();
        let one = single_p(res.statistics[0], Alternative::Greater);
        assert!((res.adjusted_p[0] - 2.0 * one).abs() < 1e-12);
        assert!(res.lower_bounds[0].is_some() && res.upper_bounds[0].is_some());
    }
}
