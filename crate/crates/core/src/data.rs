//! Bioassay data types, analysis configuration and CSV ingestion.
//!
//! Two input layouts are supported:
//!
//! * grouped tables (`dose,events,n`), one row per dose group, and
//! * per-animal records (`dose,tumor,death_time`) used for poly-k weighting.
//!
//! Lines starting with `#` are comments. Numbers use `.` as decimal separator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TrendError};
use crate::scalar::Real;

/// One dose group of a 2-by-k table. `at_risk` is real so that poly-k
/// adjusted sizes share the type with crude counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoseGroup<T> {
    pub dose: T,
    pub events: T,
    pub at_risk: T,
}

impl<T: Real> DoseGroup<T> {
    pub fn proportion(&self) -> T {
        self.events / self.at_risk
    }
}

/// Per-dose tumor counts, sorted by dose with the control first.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedTable<T> {
    groups: Vec<DoseGroup<T>>,
}

impl<T: Real> GroupedTable<T> {
    /// Validates and sorts the groups by ascending dose.
    pub fn new(mut groups: Vec<DoseGroup<T>>) -> Result<Self> {
        if groups.len() < 2 {
            return Err(TrendError::validation(format!(
                "need at least 2 dose groups, found {}",
                groups.len()
            )));
        }
        for g in &groups {
            if !g.dose.is_finite() || g.dose < T::zero() {
                return Err(TrendError::validation(format!(
                    "dose {} must be finite and nonnegative",
                    g.dose
                )));
            }
            if !(g.at_risk > T::zero()) || !g.at_risk.is_finite() {
                return Err(TrendError::validation(format!(
                    "dose {}: animals at risk must be positive, got {}",
                    g.dose, g.at_risk
                )));
            }
            if !(g.events >= T::zero()) || g.events > g.at_risk {
                return Err(TrendError::validation(format!(
                    "dose {}: events {} outside [0, {}]",
                    g.dose, g.events, g.at_risk
                )));
            }
        }
        groups.sort_by(|a, b| a.dose.partial_cmp(&b.dose).unwrap());
        if let Some(w) = groups.windows(2).find(|w| w[0].dose == w[1].dose) {
            return Err(TrendError::validation(format!("duplicate dose {}", w[0].dose)));
        }
        Ok(GroupedTable { groups })
    }

    pub fn groups(&self) -> &[DoseGroup<T>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn doses(&self) -> Vec<T> {
        self.groups.iter().map(|g| g.dose).collect()
    }

    pub fn at_risk(&self) -> Vec<T> {
        self.groups.iter().map(|g| g.at_risk).collect()
    }

    pub fn proportions(&self) -> Vec<T> {
        self.groups.iter().map(DoseGroup::proportion).collect()
    }

    /// Renders the table in the `dose,events,n` input layout.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dose,events,n\n");
        for g in &self.groups {
            out.push_str(&format!("{},{},{}\n", g.dose, g.events, g.at_risk));
        }
        out
    }
}

/// One animal: dose group, tumor indicator and time of death.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnimalRecord<T> {
    pub dose: T,
    pub tumor: bool,
    pub death_time: T,
}

/// Per-animal data with the study length `t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnimalDataset<T> {
    records: Vec<AnimalRecord<T>>,
    t_max: T,
    doses: Vec<T>,
}

impl<T: Real> AnimalDataset<T> {
    /// `t_max` is the largest observed death time.
    pub fn new(records: Vec<AnimalRecord<T>>) -> Result<Self> {
        if records.is_empty() {
            return Err(TrendError::validation("no animal records"));
        }
        for (i, r) in records.iter().enumerate() {
            if !(r.death_time > T::zero()) || !r.death_time.is_finite() {
                return Err(TrendError::validation(format!(
                    "animal {}: death time must be positive, got {}",
                    i + 1,
                    r.death_time
                )));
            }
            if !(r.dose >= T::zero()) || !r.dose.is_finite() {
                return Err(TrendError::validation(format!(
                    "animal {}: dose must be finite and nonnegative, got {}",
                    i + 1,
                    r.dose
                )));
            }
        }
        let t_max = records.iter().fold(T::zero(), |m, r| m.max(r.death_time));
        let doses = distinct_sorted(records.iter().map(|r| r.dose));
        if doses.len() < 2 {
            return Err(TrendError::validation("need at least 2 dose levels"));
        }
        Ok(AnimalDataset { records, t_max, doses })
    }

    /// Overrides the study length for truncated studies; must not be below
    /// any observed death time.
    pub fn with_t_max(mut self, t_max: T) -> Result<Self> {
        if t_max < self.t_max {
            return Err(TrendError::validation(format!(
                "t_max {} is below the latest death time {}",
                t_max, self.t_max
            )));
        }
        self.t_max = t_max;
        Ok(self)
    }

    pub fn records(&self) -> &[AnimalRecord<T>] {
        &self.records
    }

    pub fn t_max(&self) -> T {
        self.t_max
    }

    pub fn dose_levels(&self) -> &[T] {
        &self.doses
    }

    /// Index into [`Self::dose_levels`] for every record.
    pub fn group_indices(&self) -> Vec<usize> {
        self.records
            .iter()
            .map(|r| self.doses.iter().position(|&d| d == r.dose).unwrap())
            .collect()
    }

    /// Unweighted tumor counts per dose group.
    pub fn crude_table(&self) -> GroupedTable<T> {
        let mut groups: Vec<DoseGroup<T>> = self
            .doses
            .iter()
            .map(|&dose| DoseGroup {
                dose,
                events: T::zero(),
                at_risk: T::zero(),
            })
            .collect();
        for (r, g) in self.records.iter().zip(self.group_indices()) {
            groups[g].at_risk += T::one();
            if r.tumor {
                groups[g].events += T::one();
            }
        }
        GroupedTable { groups }
    }
}

pub(crate) fn distinct_sorted<T: Real>(values: impl Iterator<Item = T>) -> Vec<T> {
    let mut v: Vec<T> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    v
}

/// Link function of the binomial model, i.e. the effect size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    /// Log odds; effects are log odds ratios.
    Logit,
    /// Probability scale; effects are risk differences.
    Identity,
    /// Log probability; effects are log risk ratios.
    Log,
}

impl Link {
    pub fn effect_name(self) -> &'static str {
        match self {
            Link::Logit => "odds ratio",
            Link::Identity => "risk difference",
            Link::Log => "risk ratio",
        }
    }

    /// Whether reports add an exponentiated effect column.
    pub fn exponentiates(self) -> bool {
        !matches!(self, Link::Identity)
    }
}

/// Pseudo-count stabilisation applied per dose group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoCount {
    None,
    /// Half a tumor and half a tumor-free animal per group.
    Add1,
    /// One tumor and one tumor-free animal per group.
    Add2,
}

impl PseudoCount {
    /// Pseudo animals added to each outcome category of a group.
    pub fn per_category(self) -> f64 {
        match self {
            PseudoCount::None => 0.0,
            PseudoCount::Add1 => 0.5,
            PseudoCount::Add2 => 1.0,
        }
    }
}

/// Dose scores used by the covariate (regression) members of the family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    Arithmetic,
    Ordinal,
    Logarithmic,
}

impl Scaling {
    pub const ALL: [Scaling; 3] = [Scaling::Arithmetic, Scaling::Ordinal, Scaling::Logarithmic];

    pub fn name(self) -> &'static str {
        match self {
            Scaling::Arithmetic => "arithmetic",
            Scaling::Ordinal => "ordinal",
            Scaling::Logarithmic => "logarithmic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    Greater,
    Less,
    TwoSided,
}

/// How the pooled mean of the top dose groups is weighted in Williams contrasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilliamsWeights {
    /// Proportional to the (possibly poly-k adjusted) group sizes.
    Sized,
    Equal,
}

/// Everything that parameterises one analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub link: Link,
    pub pseudo_count: PseudoCount,
    pub scalings: Vec<Scaling>,
    pub include_williams: bool,
    pub williams_weights: WilliamsWeights,
    pub alternative: Alternative,
    /// Poly-k exponents; empty means a crude analysis.
    pub polyk_exponents: Vec<f64>,
    pub confidence_level: f64,
    pub mvn_abs_tol: f64,
    pub mvn_seed: u64,
    /// Substitute for a zero control dose on the log scale.
    pub log_zero_dose: Option<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            link: Link::Logit,
            pseudo_count: PseudoCount::Add2,
            scalings: Scaling::ALL.to_vec(),
            include_williams: true,
            williams_weights: WilliamsWeights::Sized,
            alternative: Alternative::Greater,
            polyk_exponents: Vec::new(),
            confidence_level: 0.95,
            mvn_abs_tol: 1e-4,
            mvn_seed: 42,
            log_zero_dose: None,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scalings.is_empty() && !self.include_williams {
            return Err(TrendError::validation(
                "the family is empty: select at least one scaling or enable Williams contrasts",
            ));
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(TrendError::validation(format!(
                "confidence level {} outside (0,1)",
                self.confidence_level
            )));
        }
        if !(self.mvn_abs_tol > 0.0) {
            return Err(TrendError::validation("integration tolerance must be positive"));
        }
        if let Some(k) = self.polyk_exponents.iter().find(|&&k| !(k > 0.0) || !k.is_finite()) {
            return Err(TrendError::validation(format!("poly-k exponent {k} must be positive")));
        }
        if let Some(d) = self.log_zero_dose {
            if !(d > 0.0) {
                return Err(TrendError::validation(
                    "log-scale zero-dose substitute must be positive",
                ));
            }
        }
        Ok(())
    }
}

macro_rules! impl_from_str {
    ($ty:ty, $what:literal, { $($($s:literal)|+ => $v:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = TrendError;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($($s)|+ => Ok($v),)+
                    other => Err(TrendError::validation(format!(concat!("unknown ", $what, " '{}'"), other))),
                }
            }
        }
    };
}

impl_from_str!(Link, "link", { "logit" => Link::Logit, "identity" => Link::Identity, "log" => Link::Log });
impl_from_str!(PseudoCount, "pseudo-count rule", {
    "none" => PseudoCount::None, "add1" => PseudoCount::Add1, "add2" => PseudoCount::Add2
});
impl_from_str!(Scaling, "scaling", {
    "ari" | "arithmetic" => Scaling::Arithmetic,
    "ord" | "ordinal" => Scaling::Ordinal,
    "log" | "arilog" | "logarithmic" => Scaling::Logarithmic
});
impl_from_str!(Alternative, "alternative", {
    "greater" => Alternative::Greater, "less" => Alternative::Less,
    "two-sided" | "two_sided" | "twosided" => Alternative::TwoSided
});
impl_from_str!(WilliamsWeights, "Williams weighting", {
    "sized" => WilliamsWeights::Sized, "equal" => WilliamsWeights::Equal
});

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Link::Logit => "logit",
            Link::Identity => "identity",
            Link::Log => "log",
        })
    }
}

impl fmt::Display for PseudoCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PseudoCount::None => "none",
            PseudoCount::Add1 => "add1",
            PseudoCount::Add2 => "add2",
        })
    }
}

impl fmt::Display for Alternative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alternative::Greater => "greater",
            Alternative::Less => "less",
            Alternative::TwoSided => "two-sided",
        })
    }
}

/// Adds pseudo observations to every group: `add2` one tumor and one
/// tumor-free animal, `add1` half of each. Only defined for integer group sizes.
pub fn apply_pseudo_counts<T: Real>(table: &GroupedTable<T>, rule: PseudoCount) -> Result<GroupedTable<T>> {
    if rule == PseudoCount::None {
        return Ok(table.clone());
    }
    if let Some(g) = table.groups.iter().find(|g| g.at_risk.fract() != T::zero()) {
        return Err(TrendError::validation(format!(
            "pseudo counts need integer group sizes, dose {} has {} (poly-k adjusted tables cannot take pseudo counts)",
            g.dose, g.at_risk
        )));
    }
    let a = T::lit(rule.per_category());
    let groups = table
        .groups
        .iter()
        .map(|g| DoseGroup {
            dose: g.dose,
            events: g.events + a,
            at_risk: g.at_risk + a + a,
        })
        .collect();
    Ok(GroupedTable { groups })
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes())
}

fn read_header(reader: &mut csv::Reader<&[u8]>) -> Result<Vec<String>> {
    let header = reader.headers().map_err(|e| TrendError::Parse {
        row: 0,
        message: e.to_string(),
    })?;
    Ok(header.iter().map(|s| s.to_ascii_lowercase()).collect())
}

fn expect_header(found: &[String], expected: &[&str]) -> Result<()> {
    if found.iter().map(String::as_str).eq(expected.iter().copied()) {
        Ok(())
    } else {
        Err(TrendError::Parse {
            row: 0,
            message: format!("expected header '{}', found '{}'", expected.join(","), found.join(",")),
        })
    }
}

fn parse_field<T: Real>(record: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<T> {
    let raw = record.get(idx).ok_or_else(|| TrendError::Parse {
        row,
        message: format!("missing column '{name}'"),
    })?;
    let v: f64 = raw.parse().map_err(|_| TrendError::Parse {
        row,
        message: format!("column '{name}': '{raw}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(TrendError::Parse {
            row,
            message: format!("column '{name}': '{raw}' is not finite"),
        });
    }
    Ok(T::lit(v))
}

fn parse_indicator(record: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<bool> {
    match record.get(idx) {
        Some("0") => Ok(false),
        Some("1") => Ok(true),
        Some(other) => Err(TrendError::Validation(format!(
            "row {row}: column '{name}' must be 0 or 1, got '{other}'"
        ))),
        None => Err(TrendError::Parse {
            row,
            message: format!("missing column '{name}'"),
        }),
    }
}

fn records(reader: &mut csv::Reader<&[u8]>) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| TrendError::Parse {
            row: i + 1,
            message: e.to_string(),
        })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((i + 1, rec));
    }
    Ok(out)
}

/// Parses a `dose,events,n` table. Row numbers in errors count data rows from 1.
pub fn parse_grouped_csv<T: Real>(text: &str) -> Result<GroupedTable<T>> {
    let mut reader = csv_reader(text);
    expect_header(&read_header(&mut reader)?, &["dose", "events", "n"])?;
    let mut groups = Vec::new();
    for (row, rec) in records(&mut reader)? {
        groups.push(DoseGroup {
            dose: parse_field(&rec, 0, row, "dose")?,
            events: parse_field(&rec, 1, row, "events")?,
            at_risk: parse_field(&rec, 2, row, "n")?,
        });
    }
    GroupedTable::new(groups)
}

/// Parses a `dose,tumor,death_time` per-animal file.
pub fn parse_animal_csv<T: Real>(text: &str) -> Result<AnimalDataset<T>> {
    let mut reader = csv_reader(text);
    expect_header(&read_header(&mut reader)?, &["dose", "tumor", "death_time"])?;
    let mut out = Vec::new();
    for (row, rec) in records(&mut reader)? {
        out.push(AnimalRecord {
            dose: parse_field(&rec, 0, row, "dose")?,
            tumor: parse_indicator(&rec, 1, row, "tumor")?,
            death_time: parse_field(&rec, 2, row, "death_time")?,
        });
    }
    AnimalDataset::new(out)
}

/// Per-animal data with several tumor endpoints sharing the same animals.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointDataset<T> {
    pub ids: Vec<String>,
    pub doses: Vec<T>,
    pub death_times: Option<Vec<T>>,
    /// `(endpoint name, tumor indicator per animal)`
    pub endpoints: Vec<(String, Vec<bool>)>,
}

impl<T: Real> EndpointDataset<T> {
    /// Single-endpoint view as an [`AnimalDataset`]; needs death times.
    pub fn animal_dataset(&self, endpoint: usize) -> Result<AnimalDataset<T>> {
        let times = self
            .death_times
            .as_ref()
            .ok_or_else(|| TrendError::validation("poly-k weighting needs a death_time column"))?;
        let tumors = &self.endpoints[endpoint].1;
        AnimalDataset::new(
            self.doses
                .iter()
                .zip(tumors)
                .zip(times)
                .map(|((&dose, &tumor), &death_time)| AnimalRecord {
                    dose,
                    tumor,
                    death_time,
                })
                .collect(),
        )
    }
}

/// Parses a wide per-animal file with an `id` column, a `dose` column, an
/// optional `death_time` column and one 0/1 column per requested endpoint.
pub fn parse_endpoint_csv<T: Real>(text: &str, endpoints: &[String]) -> Result<EndpointDataset<T>> {
    let mut reader = csv_reader(text);
    let header = read_header(&mut reader)?;
    let find = |name: &str| header.iter().position(|h| h == name);
    let id_col = find("id").ok_or_else(|| TrendError::Parse {
        row: 0,
        message: "joint endpoint analysis needs an 'id' column to align animals".into(),
    })?;
    let dose_col = find("dose").ok_or_else(|| TrendError::Parse {
        row: 0,
        message: "missing 'dose' column".into(),
    })?;
    let time_col = find("death_time");
    if endpoints.is_empty() {
        return Err(TrendError::validation("no endpoints selected"));
    }
    let mut endpoint_cols = Vec::new();
    for e in endpoints {
        let col = find(&e.to_ascii_lowercase()).ok_or_else(|| TrendError::Parse {
            row: 0,
            message: format!("endpoint column '{e}' not found"),
        })?;
        endpoint_cols.push(col);
    }

    let mut ids = Vec::new();
    let mut doses = Vec::new();
    let mut times = Vec::new();
    let mut tumors = vec![Vec::new(); endpoints.len()];
    for (row, rec) in records(&mut reader)? {
        let id = rec.get(id_col).unwrap_or_default().to_string();
        if id.is_empty() {
            return Err(TrendError::Parse {
                row,
                message: "empty id".into(),
            });
        }
        if ids.contains(&id) {
            return Err(TrendError::validation(format!("duplicate animal id '{id}'")));
        }
        ids.push(id);
        doses.push(parse_field::<T>(&rec, dose_col, row, "dose")?);
        if let Some(c) = time_col {
            times.push(parse_field::<T>(&rec, c, row, "death_time")?);
        }
        for (k, &c) in endpoint_cols.iter().enumerate() {
            tumors[k].push(parse_indicator(&rec, c, row, &endpoints[k])?);
        }
    }
    if ids.is_empty() {
        return Err(TrendError::validation("no animal records"));
    }
    if distinct_sorted(doses.iter().copied()).len() < 2 {
        return Err(TrendError::validation("need at least 2 dose levels"));
    }
    if doses.iter().any(|d| !(*d >= T::zero())) {
        return Err(TrendError::validation("doses must be nonnegative"));
    }
    if times.iter().any(|t| !(*t > T::zero())) {
        return Err(TrendError::validation("death times must be positive"));
    }
    Ok(EndpointDataset {
        ids,
        doses,
        death_times: time_col.map(|_| times),
        endpoints: endpoints.iter().cloned().zip(tumors).collect(),
    })
}
