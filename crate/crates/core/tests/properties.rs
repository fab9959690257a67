use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trendmax::{
    analyze_table, build_family, combine, test_family, AnalysisConfig, DoseGroup, GroupedTable, PseudoCount, Scaling,
    UnitData,
};

fn random_table(rng: &mut ChaCha8Rng) -> GroupedTable<f64> {
    let k = rng.random_range(2..=4);
    let doses = [0.0, 1.0, 3.0, 10.0, 30.0];
    let groups = (0..=k)
        .map(|i| {
            let n = rng.random_range(10..=60) as f64;
            let p: f64 = rng.random_range(0.0..0.35);
            let events = (0..n as usize).filter(|_| rng.random::<f64>() < p).count() as f64;
            DoseGroup {
                dose: doses[i],
                events,
                at_risk: n,
            }
        })
        .collect();
    GroupedTable::new(groups).unwrap()
}

fn loose() -> AnalysisConfig {
    AnalysisConfig {
        mvn_abs_tol: 1e-3,
        ..AnalysisConfig::default()
    }
}

#[test]
fn adjusted_p_lies_between_raw_and_bonferroni() {
    let cfg = loose();
    let tol = 2.0 * cfg.mvn_abs_tol;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for t in 0..200 {
        let table = random_table(&mut rng);
        let fam = build_family(
            &UnitData::from_table(&trendmax::apply_pseudo_counts(&table, cfg.pseudo_count).unwrap()),
            &cfg,
        )
        .unwrap();
        let inf = test_family(&fam, &cfg).unwrap();
        let m = inf.len() as f64;
        for i in 0..inf.len() {
            let (raw, adj) = (inf.unadjusted_p[i], inf.adjusted_p[i]);
            assert!(adj >= raw - tol, "table {t} member {i}: {adj} < {raw}");
            assert!(
                adj <= (m * raw).min(1.0) + tol,
                "table {t} member {i}: {adj} > {m}*{raw}"
            );
        }
        let r = inf.correlation_matrix();
        for i in 0..inf.len() {
            assert!((r[(i, i)] - 1.0).abs() < 1e-12);
        }
        let (eig, _) = r.symmetric_eigen();
        assert!(eig.iter().all(|&l| l > -1e-8), "table {t}: {eig:?}");
    }
}

#[test]
fn same_seed_is_bitwise_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let table = random_table(&mut rng);
    let cfg = loose();
    let a = analyze_table(&table, &cfg).unwrap();
    let b = analyze_table(&table, &cfg).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let other = analyze_table(
        &table,
        &AnalysisConfig {
            mvn_seed: 8,
            ..cfg.clone()
        },
    )
    .unwrap();
    for (x, y) in a.members.iter().zip(&other.members) {
        assert_eq!(x.stat, y.stat);
        assert!((x.p_adj - y.p_adj).abs() < 2.0 * cfg.mvn_abs_tol);
    }
}

#[test]
fn combining_endpoints_never_lowers_adjusted_p() {
    let cfg = AnalysisConfig {
        scalings: vec![Scaling::Arithmetic, Scaling::Logarithmic],
        ..loose()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..5 {
        let doses: Vec<f64> = (0..120).map(|i| [0.0, 1.0, 3.0, 10.0][i % 4]).collect();
        let sites: Vec<Vec<bool>> = (0..3)
            .map(|_| {
                let slope: f64 = rng.random_range(0.0..0.03);
                doses.iter().map(|d| rng.random::<f64>() < 0.05 + slope * d).collect()
            })
            .collect();
        let fams: Vec<_> = sites
            .iter()
            .map(|s| {
                build_family(
                    &UnitData::from_animals(&doses, s, None, PseudoCount::Add2).unwrap(),
                    &cfg,
                )
                .unwrap()
            })
            .collect();
        let labels: Vec<String> = (0..fams.len()).map(|i| format!("site{i}")).collect();
        let combined = combine(&fams, &labels).unwrap();
        let joint = test_family(&combined.family, &cfg).unwrap();
        for (block, fam) in combined.blocks.iter().zip(&fams) {
            let own = test_family(fam, &cfg).unwrap();
            for (k, i) in block.members.clone().enumerate() {
                assert!(joint.adjusted_p[i] >= own.adjusted_p[k] - 2.0 * cfg.mvn_abs_tol);
                assert_eq!(joint.statistics[i], own.statistics[k]);
            }
        }
        assert!(joint.critical_value >= test_family(&fams[0], &cfg).unwrap().critical_value - 1e-3);
    }
}

#[test]
fn single_precision_tracks_double() {
    let text = "dose,events,n\n0,0,46\n0.0875,2,45\n0.175,2,46\n0.35,6,47\n0.70,6,44\n";
    let cfg = loose();
    let r64 = analyze_table(&trendmax::parse_grouped_csv::<f64>(text).unwrap(), &cfg).unwrap();
    let r32 = analyze_table(&trendmax::parse_grouped_csv::<f32>(text).unwrap(), &cfg).unwrap();
    for (a, b) in r64.members.iter().zip(&r32.members) {
        assert_eq!(a.label, b.label);
        assert!((a.stat - b.stat).abs() < 5e-3, "{}: {} vs {}", a.label, a.stat, b.stat);
        assert!((a.p_adj - b.p_adj).abs() < 5e-3);
    }
}
