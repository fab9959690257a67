//! Joint max-tests over several families fitted to the same animals, e.g.
//! several tumor sites or several poly-k exponents.

use std::ops::Range;

use crate::error::{Result, TrendError};
use crate::family::{FamilyModel, MarginalModelFamily};
use crate::mmm::JointInference;
use crate::scalar::Real;

pub const LOW_CORRELATION_WARNING: &str = "low-correlation combination, interpret with care";

/// Ratio of the combined max-test p-value to the smallest unadjusted
/// p-value above which [`LOW_CORRELATION_WARNING`] is raised.
pub const LOW_CORRELATION_RATIO: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub label: String,
    /// Member indices of this block in the combined family.
    pub members: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedFamily<T> {
    pub blocks: Vec<Block>,
    pub family: MarginalModelFamily<T>,
}

impl<T: Real> CombinedFamily<T> {
    pub fn len(&self) -> usize {
        self.family.len()
    }

    pub fn is_empty(&self) -> bool {
        self.family.is_empty()
    }

    /// Block label of every member.
    pub fn member_blocks(&self) -> Vec<String> {
        let mut out = vec![String::new(); self.len()];
        for b in &self.blocks {
            for i in b.members.clone() {
                out[i].clone_from(&b.label);
            }
        }
        out
    }
}

/// Concatenates families into one. Member labels get their block label as
/// a prefix (`"t24: arithmetic"`). Cross-block covariances come from the
/// shared per-unit scores exactly as within a block.
pub fn combine<T: Real>(families: &[MarginalModelFamily<T>], labels: &[String]) -> Result<CombinedFamily<T>> {
    if families.len() < 2 {
        return Err(TrendError::validation("combining needs at least 2 families"));
    }
    if labels.len() != families.len() {
        return Err(TrendError::validation("one label per family is required"));
    }
    let n = families[0].n_units;
    let mut models = Vec::new();
    let mut members = Vec::new();
    let mut blocks = Vec::new();
    for (fam, label) in families.iter().zip(labels) {
        if fam.n_units != n {
            return Err(TrendError::UnitMismatch {
                expected: n,
                found: fam.n_units,
            }
            .in_member(label));
        }
        let offset = models.len();
        let start = members.len();
        models.extend(fam.models.iter().map(|m| FamilyModel {
            label: format!("{label}: {}", m.label),
            fit: m.fit.clone(),
        }));
        members.extend(fam.members.iter().map(|m| {
            let mut m = m.clone();
            m.label = format!("{label}: {}", m.label);
            m.model += offset;
            m
        }));
        blocks.push(Block {
            label: label.clone(),
            members: start..members.len(),
        });
    }
    let family = MarginalModelFamily::new(models, members)?;
    Ok(CombinedFamily { blocks, family })
}

/// Flags combinations whose max-test p-value is far above the smallest
/// unadjusted p-value of any member, which happens when weakly correlated
/// binary endpoints are pooled.
pub fn low_correlation_warning<T: Real>(combined: &JointInference<T>) -> Option<&'static str> {
    let min_raw = combined
        .unadjusted_p
        .iter()
        .map(|p| p.as_f64())
        .fold(f64::INFINITY, f64::min);
    (combined.max_test_p().as_f64() > LOW_CORRELATION_RATIO * min_raw).then_some(LOW_CORRELATION_WARNING)
}
