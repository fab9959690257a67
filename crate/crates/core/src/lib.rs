//! Maximum trend tests for tumor incidence data.
//!
//! Several marginal binomial models (dose as a covariate under different
//! scalings, dose as a factor with Williams-type contrasts) are fitted to the
//! same animals. Their joint covariance comes from a sandwich estimator over
//! the stacked unit scores, and the maximum of the standardized statistics is
//! referred to a multivariate normal distribution.

// `!(x > 0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod data;
pub mod error;
pub mod family;
pub mod glm;
pub mod linalg;
pub mod mmm;
pub mod multi;
pub mod mvn;
pub mod polyk;
pub mod report;
pub mod scalar;

pub use analysis::{analyze_endpoints, analyze_polyk, analyze_table};
pub use data::{
    apply_pseudo_counts, parse_animal_csv, parse_endpoint_csv, parse_grouped_csv, Alternative, AnalysisConfig,
    AnimalDataset, AnimalRecord, DoseGroup, EndpointDataset, GroupedTable, Link, PseudoCount, Scaling, WilliamsWeights,
};
pub use error::{Result, TrendError};
pub use family::{
    build_family, make_scaling, williams_contrasts, williams_contrasts_for_doses, ContrastMatrix, DoseScaling,
    FamilyMember, FamilyModel, MarginalModelFamily, MemberKind, UnitData,
};
pub use glm::{fit_binomial, wald_statistic, BinomialData, BinomialModel, DesignMatrix, FittedModel};
pub use linalg::Matrix;
pub use mmm::{functional_covariance, joint_covariance, single_p, test_family, JointInference};
pub use multi::{combine, low_correlation_warning, Block, CombinedFamily, LOW_CORRELATION_WARNING};
pub use mvn::{normal_cdf, normal_quantile, normal_sf, repair_correlation, Mvn, MvnConfig, MvnEstimate};
pub use polyk::{adjusted_table, polyk_weights, PolykWeights};
pub use report::{Effect, GroupRow, MemberRow, Report};
pub use scalar::Real;

pub type GroupedTableF64 = GroupedTable<f64>;
pub type GroupedTableF32 = GroupedTable<f32>;
pub type AnimalDatasetF64 = AnimalDataset<f64>;
pub type FittedModelF64 = FittedModel<f64>;
pub type MarginalModelFamilyF64 = MarginalModelFamily<f64>;
