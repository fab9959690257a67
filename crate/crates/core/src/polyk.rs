//! Poly-k mortality adjustment.
//!
//! Tumor-free animals that died before the end of the study count as a
//! fraction `(t / t_max)^k` of an animal at risk; tumor-bearing animals and
//! survivors count fully.

use crate::data::{AnimalDataset, DoseGroup, GroupedTable};
use crate::error::{Result, TrendError};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct PolykWeights<T> {
    pub exponent: T,
    /// One weight per record, in dataset order.
    pub weights: Vec<T>,
    pub doses: Vec<T>,
    /// `n_i*`, the sum of weights per dose group.
    pub adjusted_sizes: Vec<T>,
    pub events: Vec<T>,
    /// `p_i* = y_i / n_i*`
    pub adjusted_rates: Vec<T>,
}

pub fn polyk_weights<T: Real>(data: &AnimalDataset<T>, k: T) -> Result<PolykWeights<T>> {
    if !(k > T::zero()) || !k.is_finite() {
        return Err(TrendError::validation(format!("poly-k exponent {k} must be positive")));
    }
    let t_max = data.t_max();
    let weights: Vec<T> = data
        .records()
        .iter()
        .map(|r| {
            if r.tumor {
                T::one()
            } else {
                (r.death_time / t_max).powf(k)
            }
        })
        .collect();
    let doses = data.dose_levels().to_vec();
    let mut sizes = vec![T::zero(); doses.len()];
    let mut events = vec![T::zero(); doses.len()];
    for ((r, g), &w) in data.records().iter().zip(data.group_indices()).zip(&weights) {
        sizes[g] += w;
        if r.tumor {
            events[g] += T::one();
        }
    }
    let adjusted_rates = events.iter().zip(&sizes).map(|(&y, &n)| y / n).collect();
    Ok(PolykWeights {
        exponent: k,
        weights,
        doses,
        adjusted_sizes: sizes,
        events,
        adjusted_rates,
    })
}

/// Tumor counts against poly-k adjusted group sizes. For reporting; fits use
/// the per-animal weights directly.
pub fn adjusted_table<T: Real>(data: &AnimalDataset<T>, k: T) -> Result<GroupedTable<T>> {
    let w = polyk_weights(data, k)?;
    if let Some(i) = w.adjusted_sizes.iter().position(|&n| !(n > T::zero())) {
        return Err(TrendError::validation(format!(
            "dose {}: poly-k adjusted group size vanished",
            w.doses[i]
        )));
    }
    GroupedTable::new(
        w.doses
            .iter()
            .zip(&w.events)
            .zip(&w.adjusted_sizes)
            .map(|((&dose, &events), &at_risk)| DoseGroup { dose, events, at_risk })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AnimalRecord;
    use proptest::prelude::*;

    fn rec(dose: f64, tumor: bool, death_time: f64) -> AnimalRecord<f64> {
        AnimalRecord {
            dose,
            tumor,
            death_time,
        }
    }

    #[test]
    fn single_animal_weights() {
        let d = AnimalDataset::new(vec![
            rec(0.0, false, 365.0),
            rec(0.0, true, 100.0),
            rec(37.0, false, 730.0),
        ])
        .unwrap();
        let w = polyk_weights(&d, 3.0).unwrap();
        assert_eq!(w.weights, vec![0.125, 1.0, 1.0]);
    }

    #[test]
    fn survivors_leave_the_table_unchanged() {
        let d = AnimalDataset::new(vec![
            rec(0.0, false, 730.0),
            rec(0.0, true, 730.0),
            rec(5.0, true, 730.0),
            rec(5.0, false, 730.0),
            rec(5.0, false, 730.0),
        ])
        .unwrap();
        for k in [0.5, 3.0, 6.0] {
            assert_eq!(adjusted_table(&d, k).unwrap(), d.crude_table());
        }
    }

    #[test]
    fn hand_computed_adjusted_sizes() {
        let mut recs = Vec::new();
        for dose in [0.0, 10.0] {
            recs.push(rec(dose, false, 365.0));
            recs.push(rec(dose, false, 365.0));
            recs.push(rec(dose, true, 500.0));
        }
        recs.push(rec(10.0, true, 730.0));
        let d = AnimalDataset::new(recs).unwrap();
        let t = adjusted_table(&d, 3.0).unwrap();
        // 1 + 2 * (1/2)^3 in the control; the extra survivor adds 1 to the dosed group
        assert_eq!(t.groups()[0].at_risk, 1.25);
        assert_eq!(t.groups()[1].at_risk, 2.25);
    }

    #[test]
    fn rejects_nonpositive_exponent() {
        let d = AnimalDataset::new(vec![rec(0.0, false, 10.0), rec(1.0, true, 20.0)]).unwrap();
        assert!(polyk_weights(&d, 0.0).is_err());
    }

    fn arb_dataset() -> impl Strategy<Value = AnimalDataset<f64>> {
        prop::collection::vec((0usize..3, any::<bool>(), 1u32..=730), 6..60).prop_map(|v| {
            let mut recs: Vec<_> = v
                .into_iter()
                .map(|(g, tumor, t)| rec([0.0, 37.0, 75.0][g], tumor, f64::from(t)))
                .collect();
            recs.push(rec(0.0, false, 730.0));
            recs.push(rec(37.0, false, 730.0));
            recs.push(rec(75.0, false, 730.0));
            AnimalDataset::new(recs).unwrap()
        })
    }

    proptest! {
        #[test]
        fn weights_are_bounded_and_monotone_in_k(d in arb_dataset()) {
            let w3 = polyk_weights(&d, 3.0).unwrap();
            let w6 = polyk_weights(&d, 6.0).unwrap();
            for ((r, &a), &b) in d.records().iter().zip(&w3.weights).zip(&w6.weights) {
                prop_assert!(a > 0.0 && a <= 1.0);
                if r.tumor || r.death_time == d.t_max() {
                    prop_assert_eq!(a, 1.0);
                    prop_assert_eq!(b, 1.0);
                } else {
                    prop_assert!(b < a);
                }
            }
            let crude = d.crude_table();
            for (i, g) in crude.groups().iter().enumerate() {
                prop_assert!(w6.adjusted_sizes[i] <= w3.adjusted_sizes[i]);
                prop_assert!(w3.adjusted_sizes[i] <= g.at_risk + 1e-12);
                prop_assert!(w3.adjusted_rates[i] >= g.proportion() - 1e-12);
            }
        }

        #[test]
        fn small_k_approaches_crude(d in arb_dataset()) {
            let w = polyk_weights(&d, 1e-9).unwrap();
            for (n_star, g) in w.adjusted_sizes.iter().zip(d.crude_table().groups()) {
                prop_assert!((n_star - g.at_risk).abs() < 1e-6);
            }
        }
    }
}
