//! Dose scalings, Williams-type contrasts and the family of marginal models
//! fitted to one dataset.

use serde::{Deserialize, Serialize};

use crate::data::{AnalysisConfig, GroupedTable, PseudoCount, Scaling, WilliamsWeights};
use crate::error::{Result, TrendError};
use crate::glm::{fit_binomial, BinomialData, DesignMatrix, FittedModel};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Scores for the dose levels under one scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseScaling<T> {
    pub tag: Scaling,
    pub values: Vec<T>,
}

/// Scores for strictly increasing `doses`.
///
/// The logarithmic scaling needs a positive stand-in for a zero control
/// dose; by default it is `d1^2 / d2` (one log-spacing below the lowest
/// nonzero dose `d1`, with `d2` the next one).
pub fn make_scaling<T: Real>(doses: &[T], tag: Scaling, zero_substitute: Option<T>) -> Result<DoseScaling<T>> {
    if doses.len() < 2 {
        return Err(TrendError::validation("a scaling needs at least 2 doses"));
    }
    if doses.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(TrendError::validation("doses must be strictly increasing"));
    }
    let values = match tag {
        Scaling::Arithmetic => doses.to_vec(),
        Scaling::Ordinal => (0..doses.len()).map(|i| T::lit(i as f64)).collect(),
        Scaling::Logarithmic => {
            if doses[0] < T::zero() {
                return Err(TrendError::validation("logarithmic scaling needs nonnegative doses"));
            }
            let mut d = doses.to_vec();
            if d[0] == T::zero() {
                d[0] = match zero_substitute {
                    Some(s) if s > T::zero() && s < d[1] => s,
                    Some(s) => {
                        return Err(TrendError::validation(format!(
                            "zero-dose substitute {s} must lie in (0, {})",
                            d[1]
                        )))
                    }
                    None if d.len() >= 3 => d[1] * d[1] / d[2],
                    None => {
                        return Err(TrendError::validation(
                            "logarithmic scaling with a zero dose needs at least 2 nonzero doses",
                        ))
                    }
                };
            }
            d.into_iter().map(T::ln).collect()
        }
    };
    Ok(DoseScaling { tag, values })
}

/// Contrast rows over the group means, with readable labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMatrix<T> {
    pub rows: Vec<Vec<T>>,
    pub labels: Vec<String>,
}

/// Williams-type contrasts: row `r` compares the control with the pooled
/// mean of the top `r` groups, weighted by `sizes`. Rows run from the
/// highest dose alone to all dose groups pooled.
pub fn williams_contrasts<T: Real>(sizes: &[T]) -> ContrastMatrix<T> {
    let names: Vec<String> = (0..sizes.len()).map(|i| i.to_string()).collect();
    williams_with_names(sizes, &names)
}

/// [`williams_contrasts`] labelled with dose values, e.g. `C: 0-(75+150)/2`.
pub fn williams_contrasts_for_doses<T: Real>(doses: &[T], sizes: &[T]) -> ContrastMatrix<T> {
    let names: Vec<String> = doses.iter().map(|d| format_dose(*d)).collect();
    williams_with_names(sizes, &names)
}

fn williams_with_names<T: Real>(sizes: &[T], names: &[String]) -> ContrastMatrix<T> {
    let groups = sizes.len();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for r in 1..groups {
        let top = groups - r..groups;
        let total: T = sizes[top.clone()].iter().copied().sum();
        let mut row = vec![T::zero(); groups];
        row[0] = -T::one();
        for i in top.clone() {
            row[i] = sizes[i] / total;
        }
        rows.push(row);
        labels.push(if r == 1 {
            format!("C: {}-{}", names[0], names[groups - 1])
        } else {
            format!("C: {}-({})/{}", names[0], names[top].join("+"), r)
        });
    }
    ContrastMatrix { rows, labels }
}

fn format_dose<T: Real>(d: T) -> String {
    d.to_string()
}

/// Observational units shared by every model in a family.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitData<T> {
    /// Distinct dose levels, ascending.
    pub doses: Vec<T>,
    /// Dose-group index of every unit.
    pub group: Vec<usize>,
    pub response: BinomialData<T>,
}

impl<T: Real> UnitData<T> {
    /// Two Bernoulli unit types per group (tumor, tumor-free) whose
    /// multiplicities are the counts. Pseudo counts must already be applied.
    pub fn from_table(table: &GroupedTable<T>) -> Self {
        let mut group = Vec::new();
        let mut successes = Vec::new();
        let mut multiplicity = Vec::new();
        for (i, g) in table.groups().iter().enumerate() {
            group.extend([i, i]);
            successes.extend([T::one(), T::zero()]);
            multiplicity.extend([g.events, g.at_risk - g.events]);
        }
        let n = group.len();
        UnitData {
            doses: table.doses(),
            group,
            response: BinomialData::new(successes, vec![T::one(); n], vec![T::one(); n])
                .with_multiplicity(multiplicity),
        }
    }

    /// One unit per animal, optionally with prior (poly-k) weights. Pseudo
    /// counts append one tumor and one tumor-free pseudo unit per group.
    pub fn from_animals(doses: &[T], tumor: &[bool], weights: Option<&[T]>, pseudo: PseudoCount) -> Result<Self> {
        if doses.len() != tumor.len() || weights.is_some_and(|w| w.len() != doses.len()) {
            return Err(TrendError::validation("animal vectors differ in length"));
        }
        if weights.is_some() && pseudo != PseudoCount::None {
            return Err(TrendError::validation(
                "pseudo counts cannot be combined with poly-k weights",
            ));
        }
        let levels = crate::data::distinct_sorted(doses.iter().copied());
        if levels.len() < 2 {
            return Err(TrendError::validation("need at least 2 dose levels"));
        }
        let mut group: Vec<usize> = doses
            .iter()
            .map(|d| levels.iter().position(|l| l == d).unwrap())
            .collect();
        let mut successes: Vec<T> = tumor.iter().map(|&t| if t { T::one() } else { T::zero() }).collect();
        let mut prior: Vec<T> = weights.map_or_else(|| vec![T::one(); doses.len()], <[T]>::to_vec);
        let mut multiplicity = vec![T::one(); doses.len()];
        if pseudo != PseudoCount::None {
            let a = T::lit(pseudo.per_category());
            for g in 0..levels.len() {
                for y in [T::one(), T::zero()] {
                    group.push(g);
                    successes.push(y);
                    prior.push(T::one());
                    multiplicity.push(a);
                }
            }
        }
        let n = group.len();
        Ok(UnitData {
            doses: levels,
            group,
            response: BinomialData::new(successes, vec![T::one(); n], prior).with_multiplicity(multiplicity),
        })
    }

    pub fn n_units(&self) -> usize {
        self.group.len()
    }

    /// Effective number of animals per group (poly-k adjusted when weighted).
    pub fn group_sizes(&self) -> Vec<T> {
        let r = &self.response;
        let mut sizes = vec![T::zero(); self.doses.len()];
        for (u, &g) in self.group.iter().enumerate() {
            sizes[g] += r.multiplicity[u] * r.prior_weights[u] * r.trials[u];
        }
        sizes
    }

    pub fn group_events(&self) -> Vec<T> {
        let r = &self.response;
        let mut events = vec![T::zero(); self.doses.len()];
        for (u, &g) in self.group.iter().enumerate() {
            events[g] += r.multiplicity[u] * r.successes[u];
        }
        events
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemberKind {
    /// Dose as a quantitative covariate (regression slope).
    Covariate,
    /// Dose as a factor (contrast of group means).
    Factor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyModel<T> {
    pub label: String,
    pub fit: FittedModel<T>,
}

/// One test of the family: a linear functional of one model's coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyMember<T> {
    pub label: String,
    pub kind: MemberKind,
    /// Index into [`MarginalModelFamily::models`].
    pub model: usize,
    pub functional: Vec<T>,
}

/// Marginal models fitted to the same units, plus the functionals under test.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalModelFamily<T> {
    pub models: Vec<FamilyModel<T>>,
    pub members: Vec<FamilyMember<T>>,
    pub n_units: usize,
}

impl<T: Real> MarginalModelFamily<T> {
    pub fn new(models: Vec<FamilyModel<T>>, members: Vec<FamilyMember<T>>) -> Result<Self> {
        let n_units = models.first().map_or(0, |m| m.fit.n_units);
        for m in &models {
            if m.fit.n_units != n_units {
                return Err(TrendError::UnitMismatch {
                    expected: n_units,
                    found: m.fit.n_units,
                });
            }
            if m.fit.multiplicity != models[0].fit.multiplicity {
                return Err(TrendError::validation(format!(
                    "{}: unit multiplicities differ from the first model",
                    m.label
                )));
            }
        }
        for mem in &members {
            let model = models
                .get(mem.model)
                .ok_or_else(|| TrendError::validation(format!("{}: no such model", mem.label)))?;
            if mem.functional.len() != model.fit.n_params() {
                return Err(TrendError::validation(format!(
                    "{}: functional length {} != {} parameters",
                    mem.label,
                    mem.functional.len(),
                    model.fit.n_params()
                )));
            }
        }
        if members.is_empty() {
            return Err(TrendError::validation("family has no members"));
        }
        Ok(MarginalModelFamily {
            models,
            members,
            n_units,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.members.iter().map(|m| m.label.clone()).collect()
    }

    /// Sub-family with the given members, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let members = indices
            .iter()
            .map(|&i| {
                self.members
                    .get(i)
                    .cloned()
                    .ok_or_else(|| TrendError::validation(format!("member index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.models.clone(), members)
    }

    /// Stacked parameter offset of every model.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.models
            .iter()
            .map(|m| {
                let o = off;
                off += m.fit.n_params();
                o
            })
            .collect()
    }

    pub fn n_stacked_params(&self) -> usize {
        self.models.iter().map(|m| m.fit.n_params()).sum()
    }
}

fn fit_labelled<T: Real>(
    label: &str,
    design: Matrix<T>,
    names: Vec<String>,
    units: &UnitData<T>,
    cfg: &AnalysisConfig,
) -> Result<FittedModel<T>> {
    let design = DesignMatrix::new(design, names).map_err(|e| e.in_member(label))?;
    fit_binomial(&design, &units.response, cfg.link).map_err(|e| e.in_member(label))
}

/// Fits one slope model per scaling and, with Williams contrasts enabled,
/// one cell-means factor model whose contrast rows become members.
pub fn build_family<T: Real>(units: &UnitData<T>, cfg: &AnalysisConfig) -> Result<MarginalModelFamily<T>> {
    cfg.validate()?;
    let n = units.n_units();
    let k = units.doses.len();
    let mut scalings = cfg.scalings.clone();
    scalings.sort();
    scalings.dedup();

    let mut models = Vec::new();
    let mut members = Vec::new();
    for tag in scalings {
        let scaling =
            make_scaling(&units.doses, tag, cfg.log_zero_dose.map(T::lit)).map_err(|e| e.in_member(tag.name()))?;
        let x = Matrix::from_fn(n, 2, |u, j| {
            if j == 0 {
                T::one()
            } else {
                scaling.values[units.group[u]]
            }
        });
        let fit = fit_labelled(tag.name(), x, vec!["(Intercept)".into(), tag.name().into()], units, cfg)?;
        members.push(FamilyMember {
            label: tag.name().to_string(),
            kind: MemberKind::Covariate,
            model: models.len(),
            functional: vec![T::zero(), T::one()],
        });
        models.push(FamilyModel {
            label: tag.name().to_string(),
            fit,
        });
    }
    if cfg.include_williams {
        let x = Matrix::from_fn(n, k, |u, j| if units.group[u] == j { T::one() } else { T::zero() });
        let names = units
            .doses
            .iter()
            .map(|d| format!("dose {}", format_dose(*d)))
            .collect();
        let fit = fit_labelled("factor", x, names, units, cfg)?;
        let sizes = match cfg.williams_weights {
            WilliamsWeights::Sized => units.group_sizes(),
            WilliamsWeights::Equal => vec![T::one(); k],
        };
        let contrasts = williams_contrasts_for_doses(&units.doses, &sizes);
        for (row, label) in contrasts.rows.into_iter().zip(contrasts.labels) {
            members.push(FamilyMember {
                label,
                kind: MemberKind::Factor,
                model: models.len(),
                functional: row,
            });
        }
        models.push(FamilyModel {
            label: "factor".into(),
            fit,
        });
    }
    MarginalModelFamily::new(models, members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_pseudo_counts, parse_grouped_csv};
    use proptest::prelude::*;

    #[test]
    fn ordinal_and_arithmetic_scores() {
        let doses = [0.0, 0.0875, 0.175, 0.35, 0.70];
        assert_eq!(
            make_scaling(&doses, Scaling::Ordinal, None).unwrap().values,
            vec![0.0, 1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(
            make_scaling(&[0.0, 1.0], Scaling::Arithmetic, None).unwrap().values,
            vec![0.0, 1.0]
        );
    }

    #[test]
    fn log_scale_replaces_zero_dose() {
        let s = make_scaling(&[0.0, 121.0, 361.0, 1214.0], Scaling::Logarithmic, None).unwrap();
        let d0 = 121.0f64 * 121.0 / 361.0;
        assert!((d0 - 40.557).abs() < 1e-3);
        let expected = [d0.ln(), 121f64.ln(), 361f64.ln(), 1214f64.ln()];
        for (a, b) in s.values.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let manual = make_scaling(&[0.0, 121.0, 361.0], Scaling::Logarithmic, Some(10.0)).unwrap();
        assert_eq!(manual.values[0], 10f64.ln());
        assert!(make_scaling(&[0.0, 5.0], Scaling::Logarithmic, None).is_err());
        assert!(make_scaling(&[0.0, 5.0], Scaling::Logarithmic, Some(1.0)).is_ok());
    }

    #[test]
    fn williams_equal_sizes() {
        let c = williams_contrasts(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(c.rows[0], vec![-1.0, 0.0, 0.0, 1.0]);
        assert_eq!(c.rows[1], vec![-1.0, 0.0, 0.5, 0.5]);
        assert_eq!(c.rows[2], vec![-1.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        let labelled = williams_contrasts_for_doses(&[0.0, 37.0, 75.0, 150.0], &[50.0; 4]);
        assert_eq!(
            labelled.labels,
            vec!["C: 0-150", "C: 0-(75+150)/2", "C: 0-(37+75+150)/3"]
        );
    }

    #[test]
    fn williams_two_groups_is_pairwise() {
        let c = williams_contrasts(&[10.0, 12.0]);
        assert_eq!(c.rows, vec![vec![-1.0, 1.0]]);
    }

    #[test]
    fn williams_weighted_row() {
        let c = williams_contrasts(&[46.0, 45.0, 46.0, 47.0, 44.0]);
        assert_eq!(c.rows[1], vec![-1.0, 0.0, 0.0, 47.0 / 91.0, 44.0 / 91.0]);
        assert!(c.rows[1].iter().sum::<f64>().abs() < 1e-12);
    }

    fn table(text: &str, pseudo: PseudoCount) -> UnitData<f64> {
        let t = parse_grouped_csv(text).unwrap();
        UnitData::from_table(&apply_pseudo_counts(&t, pseudo).unwrap())
    }

    const ACRYLAMIDE: &str = "dose,events,n\n0,0,46\n0.0875,2,45\n0.175,2,46\n0.35,6,47\n0.70,6,44\n";
    const GLYPHOSATE: &str = "dose,events,n\n0,0,52\n121,2,52\n361,0,52\n1214,6,52\n";

    #[test]
    fn family_sizes() {
        let cfg = AnalysisConfig::default();
        let fam = build_family(&table(ACRYLAMIDE, PseudoCount::Add2), &cfg).unwrap();
        assert_eq!(fam.len(), 7);
        assert_eq!(fam.models.len(), 4);
        assert_eq!(
            fam.labels(),
            vec![
                "arithmetic",
                "ordinal",
                "logarithmic",
                "C: 0-0.7",
                "C: 0-(0.35+0.7)/2",
                "C: 0-(0.175+0.35+0.7)/3",
                "C: 0-(0.0875+0.175+0.35+0.7)/4"
            ]
        );
        let fam = build_family(&table(GLYPHOSATE, PseudoCount::Add2), &cfg).unwrap();
        assert_eq!(fam.len(), 6);
        let single = AnalysisConfig {
            scalings: vec![Scaling::Arithmetic],
            include_williams: false,
            ..cfg
        };
        assert_eq!(
            build_family(&table(GLYPHOSATE, PseudoCount::Add2), &single)
                .unwrap()
                .len(),
            1
        );
    }

    #[test]
    fn animal_units_match_table_units() {
        // 3 animals in two groups, tumors in the dosed group only
        let doses = [0.0, 0.0, 0.0, 2.0, 2.0, 2.0];
        let tumor = [false, false, false, true, false, true];
        let u = UnitData::from_animals(&doses, &tumor, None, PseudoCount::Add2).unwrap();
        assert_eq!(u.n_units(), 10);
        assert_eq!(u.group_sizes(), vec![5.0, 5.0]);
        assert_eq!(u.group_events(), vec![1.0, 3.0]);
        assert!(UnitData::from_animals(&doses, &tumor, Some(&[1.0; 6]), PseudoCount::Add2).is_err());
    }

    #[test]
    fn fit_errors_carry_member_label() {
        let cfg = AnalysisConfig {
            log_zero_dose: Some(500.0),
            ..AnalysisConfig::default()
        };
        let err = build_family(&table(GLYPHOSATE, PseudoCount::Add2), &cfg).unwrap_err();
        match err {
            TrendError::Member { label, .. } => assert_eq!(label, "logarithmic"),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn williams_rows_sum_to_zero(sizes in prop::collection::vec(0.5f64..80.0, 2..9)) {
            let c = williams_contrasts(&sizes);
            prop_assert_eq!(c.rows.len(), sizes.len() - 1);
            for row in &c.rows {
                prop_assert!(row.iter().sum::<f64>().abs() <= 1e-12);
                prop_assert_eq!(row[0], -1.0);
                prop_assert!(row[1..].iter().all(|&v| v >= 0.0));
                prop_assert!(row[1..].iter().any(|&v| v > 0.0));
            }
        }
    }
}
