//! Analysis reports and their text and JSON renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Alternative, AnalysisConfig, Link};
use crate::error::Result;
use crate::family::MemberKind;
use crate::mmm::JointInference;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRow {
    pub label: String,
    /// Endpoint or poly-k block in a combined analysis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<String>,
    pub kind: MemberKind,
    /// On the linear-predictor scale.
    pub estimate: f64,
    pub se: f64,
    pub stat: f64,
    pub p_raw: f64,
    pub p_adj: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// `exp` of estimate and bounds for the logit and log links.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect: Option<Effect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub estimate: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Dose-group summary (poly-k adjusted sizes where applicable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<String>,
    pub dose: f64,
    pub events: f64,
    pub at_risk: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: AnalysisConfig,
    pub members: Vec<MemberRow>,
    /// Label of the member with the smallest adjusted p-value.
    pub shape: String,
    pub warnings: Vec<String>,
    pub mvn_error: f64,
    pub critical_value: f64,
    pub max_test_p: f64,
    pub correlation: Vec<Vec<f64>>,
    pub groups: Vec<GroupRow>,
}

impl Report {
    /// `blocks` gives the block label of every member, if any.
    pub fn new<T: Real>(
        config: &AnalysisConfig,
        inference: &JointInference<T>,
        blocks: Option<Vec<String>>,
        groups: Vec<GroupRow>,
        warnings: Vec<String>,
    ) -> Self {
        let f = |v: T| v.as_f64();
        let exp = inference.link.exponentiates();
        let members = (0..inference.len())
            .map(|i| {
                let lower = inference.lower_bounds[i].map(f);
                let upper = inference.upper_bounds[i].map(f);
                let estimate = f(inference.estimates[i]);
                MemberRow {
                    label: inference.labels[i].clone(),
                    block: blocks.as_ref().map(|b| b[i].clone()),
                    kind: inference.kinds[i],
                    estimate,
                    se: f(inference.std_errors[i]),
                    stat: f(inference.statistics[i]),
                    p_raw: f(inference.unadjusted_p[i]),
                    p_adj: f(inference.adjusted_p[i]),
                    lower,
                    upper,
                    effect: exp.then(|| Effect {
                        estimate: estimate.exp(),
                        lower: lower.map(f64::exp),
                        upper: upper.map(f64::exp),
                    }),
                }
            })
            .collect();
        Report {
            config: config.clone(),
            members,
            shape: inference.labels[inference.most_likely_shape()].clone(),
            warnings,
            mvn_error: inference.mvn_error,
            critical_value: f(inference.critical_value),
            max_test_p: f(inference.max_test_p()),
            correlation: inference
                .correlation
                .iter()
                .map(|r| r.iter().map(|&v| f(v)).collect())
                .collect(),
            groups,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::error::TrendError::Parse {
            row: e.line(),
            message: e.to_string(),
        })
    }

    /// Aligned table: statistics to 2 decimals, p-values to 4.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let side = match c.alternative {
            Alternative::Greater => "greater",
            Alternative::Less => "less",
            Alternative::TwoSided => "two-sided",
        };
        let _ = writeln!(
            out,
            "Maximum trend test ({} link, {}, pseudo counts {}, alternative {})",
            c.link,
            c.link.effect_name(),
            c.pseudo_count,
            side
        );
        if !self.groups.is_empty() {
            let _ = writeln!(out);
            let bw = self
                .groups
                .iter()
                .filter_map(|g| g.block.as_ref())
                .map(String::len)
                .max();
            if let Some(w) = bw {
                let _ = write!(out, "{:<w$}  ", "block");
            }
            let _ = writeln!(out, "{:>10} {:>8} {:>8} {:>8}", "dose", "tumors", "n", "rate");
            for g in &self.groups {
                if let Some(w) = bw {
                    let _ = write!(out, "{:<w$}  ", g.block.as_deref().unwrap_or(""));
                }
                let _ = writeln!(
                    out,
                    "{:>10} {:>8} {:>8} {:>8}",
                    g.dose,
                    g.events,
                    format!("{:.1}", g.at_risk),
                    format!("{:.3}", g.rate)
                );
            }
        }
        let _ = writeln!(out);
        let lw = self.members.iter().map(|m| m.label.len()).max().unwrap_or(5).max(5);
        let exp = c.link.exponentiates();
        let bound_head = match c.alternative {
            Alternative::Greater => format!("{:>10}", "lower"),
            Alternative::Less => format!("{:>10}", "upper"),
            Alternative::TwoSided => format!("{:>10} {:>10}", "lower", "upper"),
        };
        let _ = write!(
            out,
            "{:<lw$} {:>6} {:>8} {:>8} {:>10} {:>10} {}",
            "test", "stat", "p_adj", "p_raw", "estimate", "se", bound_head
        );
        if exp {
            let name = if c.link == Link::Logit { "OR" } else { "RR" };
            let _ = write!(out, " {:>10}", name);
        }
        let _ = writeln!(out);
        for m in &self.members {
            let bounds = match c.alternative {
                Alternative::Greater => opt(m.lower),
                Alternative::Less => opt(m.upper),
                Alternative::TwoSided => format!("{} {}", opt(m.lower), opt(m.upper)),
            };
            let _ = write!(
                out,
                "{:<lw$} {:>6.2} {:>8.4} {:>8.4} {:>10.4} {:>10.4} {}",
                m.label, m.stat, m.p_adj, m.p_raw, m.estimate, m.se, bounds
            );
            if let Some(e) = &m.effect {
                let _ = write!(out, " {:>10.3}", e.estimate);
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "critical value {:.4} at level {}; max-test p {:.4}",
            self.critical_value, c.confidence_level, self.max_test_p
        );
        let _ = writeln!(out, "most likely shape: {}", self.shape);
        let _ = writeln!(out, "integration error estimate: {:.1e}", self.mvn_error);
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| format!("{:>10}", "-"), |x| format!("{x:>10.4}"))
}
