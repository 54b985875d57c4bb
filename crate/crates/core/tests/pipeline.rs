use crsma::channel::generate_channels;
use crsma::config::SystemConfig;
use crsma::experiment::*;
use crsma::phase::slot2_phases;
use crsma::rates::{d2d_channel, PhaseVector};
use crsma::schemes::SchemeId;
use proptest::prelude::*;

fn row(scheme: SchemeId, v: f64, draw: usize, energy: Option<f64>, status: RowStatus) -> ResultRow {
    ResultRow {
        scheme,
        axis_value: v,
        draw,
        seed: 1,
        status,
        energy_watts: energy,
        best_delta: energy.map(|_| 0.5),
        ao_iterations: energy.map(|_| 3),
        converged: energy.map(|_| true),
        audit_passed: energy.map(|_| true),
        channel_digest: format!("d{draw}"),
        wall_time_s: 0.0,
    }
}

fn status_for(e: Option<f64>, fail: bool) -> RowStatus {
    match (e, fail) {
        (Some(_), _) => RowStatus::Ok,
        (None, true) => RowStatus::NumericalFailure,
        (None, false) => RowStatus::Infeasible,
    }
}

fn arb_rows() -> impl Strategy<Value = Vec<ResultRow>> {
    (1usize..=6, 1usize..=4, 1usize..=4).prop_flat_map(|(ns, nv, nd)| {
        prop::collection::vec((prop::option::weighted(0.8, 1e-4f64..10.0), any::<bool>()), ns * nv * nd).prop_map(
            move |cells| {
                let mut out = Vec::new();
                let mut it = cells.into_iter();
                for vi in 0..nv {
                    for d in 0..nd {
                        for &s in &SchemeId::ALL[..ns] {
                            let (e, fail) = it.next().unwrap();
                            out.push(row(s, 1.0 + 0.5 * vi as f64, d, e, status_for(e, fail)));
                        }
                    }
                }
                out
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn summary_cells_are_consistent(rows in arb_rows()) {
        let s = summarize(Axis::RateThresholdFar, &rows);
        prop_assert_eq!(s.cells.len(), s.schemes.len() * s.values.len());
        for c in &s.cells {
            let group: Vec<f64> = rows
                .iter()
                .filter(|r| r.scheme == c.scheme && r.axis_value == c.axis_value)
                .filter_map(|r| r.energy_watts)
                .collect();
            prop_assert_eq!(c.n_feasible, group.len());
            prop_assert!(c.n_feasible + c.n_numerical_failure <= c.n_draws);
            prop_assert!((0.0..=1.0).contains(&c.infeasible_fraction));
            match c.mean_energy {
                Some(m) => {
                    let lo = group.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = group.iter().cloned().fold(0.0, f64::max);
                    prop_assert!(m >= lo * (1.0 - 1e-12) && m <= hi * (1.0 + 1e-12));
                    prop_assert!(c.ci95.unwrap() >= 0.0);
                }
                None => {
                    prop_assert!(group.is_empty());
                    prop_assert!(c.ci95.is_none());
                }
            }
        }
    }

    #[test]
    fn plot_data_round_trips(rows in arb_rows()) {
        let s = summarize(Axis::RisElements, &rows);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        emit_plot_data(&s, &path).unwrap();
        let (header, back) = read_plot_data(&path).unwrap();
        prop_assert_eq!(header.len(), 1 + 3 * s.schemes.len());
        prop_assert_eq!(&header[0], "ris_elements");
        for (i, sch) in s.schemes.iter().enumerate() {
            prop_assert_eq!(&header[1 + i], sch.name());
        }
        prop_assert_eq!(back.len(), s.values.len());
        for (pr, &v) in back.iter().zip(&s.values) {
            prop_assert_eq!(pr.axis_value, v);
            for (i, &sch) in s.schemes.iter().enumerate() {
                let c = s.cell(sch, v).unwrap();
                prop_assert_eq!(pr.mean[i], c.mean_energy);
                prop_assert_eq!(pr.ci95[i], c.ci95);
                prop_assert_eq!(pr.infeasible[i], Some(c.infeasible_fraction));
            }
        }
    }

    #[test]
    fn smaller_surface_sees_channel_prefix(seed in any::<u64>(), draw in 0usize..100, m in 0usize..12, extra in 0usize..12) {
        let mut cfg = SystemConfig::default();
        cfg.n_ris_elements = m + extra;
        let big = generate_channels(&cfg.params(), &mut draw_rng(seed, draw)).unwrap();
        cfg.n_ris_elements = m;
        let small = generate_channels(&cfg.params(), &mut draw_rng(seed, draw)).unwrap();
        prop_assert_eq!(big.truncate_ris(m), small);
    }

    #[test]
    fn closed_form_slot2_beats_random_phases(seed in any::<u64>(), m in 1usize..24) {
        let mut cfg = SystemConfig::default();
        cfg.n_ris_elements = m;
        let mut rng = draw_rng(seed, 0);
        let ch = generate_channels(&cfg.params(), &mut rng).unwrap();
        let best = d2d_channel(&ch, &slot2_phases(&ch)).unwrap().norm();
        for _ in 0..20 {
            let other = d2d_channel(&ch, &PhaseVector::random(m, &mut rng)).unwrap().norm();
            prop_assert!(other <= best * (1.0 + 1e-12));
        }
    }

    #[test]
    fn spec_toml_round_trips(seed in any::<u64>(), draws in 1usize..200, threads in 0usize..8) {
        let mut spec = ExperimentSpec::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/fig3.toml")).unwrap();
        spec.system.rng_seed = seed;
        spec.n_channel_draws = draws;
        spec.threads = threads;
        let back = ExperimentSpec::from_toml_str(&spec.to_toml_string()).unwrap();
        prop_assert_eq!(back, spec);
    }
}

#[test]
fn empty_summary_writes_header_only() {
    let s = summarize(Axis::RisXPosition, &[]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.csv");
    emit_plot_data(&s, &path).unwrap();
    let (header, rows) = read_plot_data(&path).unwrap();
    assert_eq!(header, vec!["ris_x_position".to_string()]);
    assert!(rows.is_empty());
}

#[test]
fn shipped_configs_validate() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    SystemConfig::load(format!("{dir}/default.toml")).unwrap();
    for name in ["fig2", "fig3", "fig4"] {
        let spec = ExperimentSpec::load(format!("{dir}/{name}.toml")).unwrap();
        assert_eq!(spec.name, name);
    }
}

#[test]
fn small_sweep_writes_readable_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ExperimentSpec::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/fig3.toml")).unwrap();
    spec.values = vec![2.0, 4.0];
    spec.schemes = vec![SchemeId::CrsmaRis, SchemeId::CrsmaNoris];
    spec.n_channel_draws = 2;
    spec.output_dir = dir.path().to_path_buf();
    let report = run_experiment(&spec).unwrap();
    assert_eq!(report.rows.len(), 8);
    assert_eq!(report.numerical_failures(), 0);
    let mut expected = report.rows.clone();
    for r in &mut expected {
        r.wall_time_s = 0.0;
    }
    assert_eq!(read_results(&report.results_path).unwrap(), expected);
    assert!(report.timings_path.exists());
    assert!(report.summary_path.exists());
    let (_, plot) = read_plot_data(&report.plot_path).unwrap();
    assert_eq!(plot.iter().map(|r| r.axis_value).collect::<Vec<_>>(), vec![2.0, 4.0]);

    for r in &report.rows {
        let first = report
            .rows
            .iter()
            .find(|q| q.draw == r.draw && q.axis_value == r.axis_value)
            .unwrap();
        assert_eq!(r.channel_digest, first.channel_digest);
    }
    for r in &report.rows {
        if let Some(e) = r.energy_watts {
            assert!(e > 0.0 && e.is_finite());
            assert_eq!(r.audit_passed, Some(true));
        }
    }
}
