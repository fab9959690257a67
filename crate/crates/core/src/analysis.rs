//! End-to-end analyses: data in, [`Report`] out.

use crate::data::{apply_pseudo_counts, AnalysisConfig, AnimalDataset, EndpointDataset, GroupedTable, PseudoCount};
use crate::error::{Result, TrendError};
use crate::family::{build_family, MarginalModelFamily, UnitData};
use crate::mmm::test_family;
use crate::multi::{combine, low_correlation_warning};
use crate::polyk::polyk_weights;
use crate::report::{GroupRow, Report};
use crate::scalar::Real;

/// Crude analysis of a grouped table.
pub fn analyze_table<T: Real>(table: &GroupedTable<T>, cfg: &AnalysisConfig) -> Result<Report> {
    cfg.validate()?;
    let units = UnitData::from_table(&apply_pseudo_counts(table, cfg.pseudo_count)?);
    let family = build_family(&units, cfg)?;
    let groups = table
        .groups()
        .iter()
        .map(|g| group_row(None, g.dose, g.events, g.at_risk))
        .collect();
    run(vec![(String::new(), family)], groups, cfg)
}

/// Poly-k analysis of one endpoint, one family per exponent in
/// `cfg.polyk_exponents`, jointly tested when there are several.
pub fn analyze_polyk<T: Real>(data: &AnimalDataset<T>, cfg: &AnalysisConfig) -> Result<Report> {
    cfg.validate()?;
    check_polyk(cfg)?;
    let doses: Vec<T> = data.records().iter().map(|r| r.dose).collect();
    let tumor: Vec<bool> = data.records().iter().map(|r| r.tumor).collect();
    let mut families = Vec::new();
    let mut groups = Vec::new();
    for &k in &cfg.polyk_exponents {
        let (label, family, rows) = polyk_family(data, &doses, &tumor, k, None, cfg)?;
        families.push((label, family));
        groups.extend(rows);
    }
    run(families, groups, cfg)
}

/// Joint analysis of several tumor endpoints observed on the same animals,
/// crude or (with `cfg.polyk_exponents`) poly-k adjusted.
pub fn analyze_endpoints<T: Real>(data: &EndpointDataset<T>, cfg: &AnalysisConfig) -> Result<Report> {
    cfg.validate()?;
    let mut families = Vec::new();
    let mut groups = Vec::new();
    for (e, (name, tumor)) in data.endpoints.iter().enumerate() {
        if cfg.polyk_exponents.is_empty() {
            let units = UnitData::from_animals(&data.doses, tumor, None, cfg.pseudo_count)?;
            let family = build_family(&units, cfg).map_err(|err| err.in_member(name))?;
            let crude = UnitData::from_animals(&data.doses, tumor, None, PseudoCount::None)?;
            for ((&d, y), n) in crude.doses.iter().zip(crude.group_events()).zip(crude.group_sizes()) {
                groups.push(group_row(Some(name), d, y, n));
            }
            families.push((name.clone(), family));
        } else {
            check_polyk(cfg)?;
            let animals = data.animal_dataset(e)?;
            for &k in &cfg.polyk_exponents {
                let (label, family, rows) = polyk_family(&animals, &data.doses, tumor, k, Some(name), cfg)?;
                families.push((label, family));
                groups.extend(rows);
            }
        }
    }
    run(families, groups, cfg)
}

fn check_polyk(cfg: &AnalysisConfig) -> Result<()> {
    if cfg.polyk_exponents.is_empty() {
        return Err(TrendError::validation("no poly-k exponent given"));
    }
    if cfg.pseudo_count != PseudoCount::None {
        return Err(TrendError::validation(
            "pseudo counts cannot be combined with poly-k weights, use pseudo count 'none'",
        ));
    }
    Ok(())
}

fn polyk_family<T: Real>(
    data: &AnimalDataset<T>,
    doses: &[T],
    tumor: &[bool],
    k: f64,
    endpoint: Option<&str>,
    cfg: &AnalysisConfig,
) -> Result<(String, MarginalModelFamily<T>, Vec<GroupRow>)> {
    let label = match endpoint {
        Some(e) => format!("{e} k={k}"),
        None => format!("k={k}"),
    };
    let w = polyk_weights(data, T::lit(k))?;
    let units = UnitData::from_animals(doses, tumor, Some(&w.weights), PseudoCount::None)?;
    let family = build_family(&units, cfg).map_err(|e| e.in_member(&label))?;
    let rows = w
        .doses
        .iter()
        .zip(&w.events)
        .zip(&w.adjusted_sizes)
        .map(|((&d, &y), &n)| group_row(Some(&label), d, y, n))
        .collect();
    Ok((label, family, rows))
}

fn group_row<T: Real>(block: Option<&str>, dose: T, events: T, at_risk: T) -> GroupRow {
    GroupRow {
        block: block.map(str::to_string),
        dose: dose.as_f64(),
        events: events.as_f64(),
        at_risk: at_risk.as_f64(),
        rate: (events / at_risk).as_f64(),
    }
}

fn run<T: Real>(
    mut families: Vec<(String, MarginalModelFamily<T>)>,
    groups: Vec<GroupRow>,
    cfg: &AnalysisConfig,
) -> Result<Report> {
    if families.len() == 1 {
        let (label, family) = families.pop().unwrap();
        let inference = test_family(&family, cfg)?;
        let blocks = (!label.is_empty()).then(|| vec![label; inference.len()]);
        let groups = if blocks.is_none() {
            groups
        } else {
            groups.into_iter().map(|g| GroupRow { block: None, ..g }).collect()
        };
        return Ok(Report::new(cfg, &inference, blocks, groups, Vec::new()));
    }
    let (labels, fams): (Vec<String>, Vec<_>) = families.into_iter().unzip();
    let combined = combine(&fams, &labels)?;
    let inference = test_family(&combined.family, cfg)?;
    let warnings = low_correlation_warning(&inference)
        .into_iter()
        .map(str::to_string)
        .collect();
    Ok(Report::new(
        cfg,
        &inference,
        Some(combined.member_blocks()),
        groups,
        warnings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_animal_csv, parse_endpoint_csv, Scaling};

    fn cfg() -> AnalysisConfig {
        AnalysisConfig {
            scalings: vec![Scaling::Arithmetic, Scaling::Ordinal],
            mvn_abs_tol: 1e-3,
            ..AnalysisConfig::default()
        }
    }

    const ANIMALS: &str = "id,dose,death_time,liver,lung\n\
        1,0,104,0,0\n2,0,80,0,1\n3,0,104,1,0\n4,0,60,0,0\n5,0,104,0,0\n6,0,104,0,0\n\
        7,1,90,1,0\n8,1,104,0,1\n9,1,70,0,0\n10,1,104,1,0\n11,1,104,0,0\n12,1,55,0,0\n\
        13,2,104,1,1\n14,2,85,1,0\n15,2,104,1,1\n16,2,50,0,0\n17,2,104,1,0\n18,2,104,0,1\n";

    #[test]
    fn endpoints_combine_into_blocks() {
        let data = parse_endpoint_csv::<f64>(ANIMALS, &["liver".into(), "lung".into()]).unwrap();
        let r = analyze_endpoints(&data, &cfg()).unwrap();
        assert_eq!(r.members.len(), 2 * 4);
        assert_eq!(r.members[0].label, "liver: arithmetic");
        assert_eq!(r.members[4].block.as_deref(), Some("lung"));
        assert_eq!(r.groups.len(), 6);
        assert_eq!(r.groups[2].events, 4.0);
    }

    #[test]
    fn single_polyk_matches_endpoint_route() {
        let data = parse_endpoint_csv::<f64>(ANIMALS, &["liver".into()]).unwrap();
        let animals = data.animal_dataset(0).unwrap();
        let cfg = AnalysisConfig {
            pseudo_count: PseudoCount::None,
            polyk_exponents: vec![3.0],
            ..cfg()
        };
        let a = analyze_polyk(&animals, &cfg).unwrap();
        let b = analyze_endpoints(&data, &cfg).unwrap();
        for (x, y) in a.members.iter().zip(&b.members) {
            assert!((x.stat - y.stat).abs() < 1e-12);
            assert_eq!(x.p_adj, y.p_adj);
        }
        assert!(a.groups[0].at_risk < 6.0);
    }

    #[test]
    fn polyk_rejects_pseudo_counts() {
        let animals = parse_animal_csv::<f64>("dose,tumor,death_time\n0,0,10\n0,1,8\n1,1,10\n1,0,5\n").unwrap();
        let cfg = AnalysisConfig {
            polyk_exponents: vec![3.0],
            ..cfg()
        };
        assert!(matches!(analyze_polyk(&animals, &cfg), Err(TrendError::Validation(_))));
    }
}
