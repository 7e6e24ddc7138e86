use std::fs;

use fdisac_core::channels::PinnedTarget;
use fdisac_harness::config::{ArraySection, OfdmSection};
use fdisac_harness::experiment::{reaggregate, run_experiment, run_to_dir, write_report, OutputFiles};
use fdisac_harness::{ExperimentConfig, Pipeline};

/// Fully digital 4x4 node, one noiseless on-grid target, 32x16 grid.
fn toy() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::reference();
    cfg.runs = 1;
    cfg.tx_power_sweep_dbm = vec![30.0];
    cfg.array = ArraySection {
        tx_chains: 4,
        tx_per_chain: 1,
        rx_chains: 4,
        rx_per_chain: 1,
        ue_antennas: 2,
        streams: 2,
        carrier_hz: 28e9,
    };
    cfg.ofdm = OfdmSection {
        subcarriers: 32,
        sense_symbols: 16,
        subcarrier_spacing_hz: 120e3,
        symbol_duration_s: 8.92e-6,
    };
    cfg.scenario.k_targets = 1;
    cfg.scenario.l_scatterers = 1;
    cfg.scenario.on_grid = true;
    cfg.scenario.noise_floor_dbm = f64::NEG_INFINITY;
    cfg.scenario.pinned = vec![PinnedTarget {
        doa_deg: 20.0,
        range_m: Some(300.0),
        velocity_kmh: Some(60.0),
    }];
    cfg.optimizer.n_taps = 4;
    cfg.optimizer.ue_noise_dbm = -90.0;
    cfg.sensing.close_pair.clear();
    cfg
}

fn small_desk(runs: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.runs = runs;
    cfg.ofdm.subcarriers = 64;
    cfg.ofdm.sense_symbols = 28;
    cfg
}

#[test]
fn noiseless_on_grid_target_is_recovered() {
    let cfg = toy();
    let p = Pipeline::new(&cfg).unwrap();
    let rec = p.run_single(30.0, 9).unwrap();
    let t = &rec.targets[0];
    assert!(t.matched);
    let range_bin = p.ofdm.range_bin();
    let vel_bin = p.ofdm.velocity_bin(p.array.wavelength);
    assert!(t.doa_error_deg < 0.01, "DoA error {}", t.doa_error_deg);
    assert!(t.range_error_m < 0.05 * range_bin, "range error {} m", t.range_error_m);
    assert!(t.velocity_error_mps < 0.05 * vel_bin, "velocity error {} m/s", t.velocity_error_mps);
}

#[test]
fn same_seed_same_record() {
    let cfg = small_desk(1);
    let p = Pipeline::new(&cfg).unwrap();
    let a = p.run_single(20.0, 77).unwrap();
    let b = p.run_single(20.0, 77).unwrap();
    // NaN fields defeat PartialEq, so compare the debug rendering
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn negligible_si_makes_ideal_equal_achieved() {
    let mut cfg = small_desk(1);
    cfg.scenario.si_pathloss_db = 400.0;
    let p = Pipeline::new(&cfg).unwrap();
    for seed in 0..4 {
        let rec = p.run_single(30.0, seed).unwrap();
        assert!(rec.feasible);
        assert!(
            (rec.dl_rate_bps_hz - rec.ideal_dl_rate_bps_hz).abs() < 1e-9,
            "{} vs {}",
            rec.dl_rate_bps_hz,
            rec.ideal_dl_rate_bps_hz
        );
    }
}

#[test]
fn single_run_aggregate_is_the_record() {
    let cfg = small_desk(1);
    let report = run_experiment(&cfg).unwrap();
    for agg in &report.aggregates {
        let rec = report.records_at(agg.tx_power_dbm).next().unwrap();
        assert_eq!(agg.runs, 1);
        assert_eq!(agg.mean_dl_rate_bps_hz, rec.dl_rate_bps_hz);
        assert_eq!(agg.mean_ideal_dl_rate_bps_hz, rec.ideal_dl_rate_bps_hz);
        assert_eq!(agg.all_matched_fraction, if rec.all_matched { 1.0 } else { 0.0 });
        assert_eq!(agg.feasible_fraction, if rec.feasible { 1.0 } else { 0.0 });
        let matched: Vec<_> = rec.targets.iter().filter(|t| t.matched).collect();
        assert_eq!(agg.matched_targets, matched.len());
        if matched.len() == 1 {
            assert_eq!(agg.rmse_doa_deg, matched[0].doa_error_deg);
            assert_eq!(agg.median_range_error_m, matched[0].range_error_m);
        }
    }
}

#[test]
fn aggregates_recompute_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_desk(5);
    cfg.output_path = dir.path().to_string_lossy().into_owned();
    let (report, _) = run_to_dir(&cfg).unwrap();
    let again = reaggregate(dir.path(), &cfg.tx_power_sweep_dbm).unwrap();
    let render = |a: &[fdisac_harness::Aggregate]| format!("{a:?}");
    assert_eq!(render(&again), render(&report.aggregates));
}

#[test]
fn csv_headers_are_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small_desk(1)).unwrap();
    let files = write_report(&report, dir.path()).unwrap();
    let header = |p: &std::path::Path| fs::read_to_string(p).unwrap().lines().next().unwrap().to_string();
    assert_eq!(
        header(&files.runs),
        "run,seed,tx_power_dbm,targets,matched,spurious_estimates,all_matched,pair_resolved,dl_rate_bps_hz,\
         ideal_dl_rate_bps_hz,rate_gap_bps_hz,feasible,alpha,certified,max_residual_si_dbm,residual_si_dbm"
    );
    assert_eq!(
        header(&files.targets),
        "run,tx_power_dbm,target,dl_scatterer,true_doa_deg,true_range_m,true_velocity_mps,matched,est_doa_deg,\
         est_range_m,est_velocity_mps,doa_error_deg,range_error_m,velocity_error_mps,rel_velocity_error"
    );
    assert!(header(&files.aggregate).starts_with("tx_power_dbm,runs,all_matched_fraction,"));
}

#[test]
fn unwritable_output_fails_before_computing() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let mut cfg = ExperimentConfig::reference();
    // far too many runs to finish if any were attempted
    cfg.runs = 10_000_000;
    cfg.output_path = blocker.join("out").to_string_lossy().into_owned();
    let err = run_to_dir(&cfg).unwrap_err();
    assert!(matches!(err, fdisac_harness::HarnessError::Io(_)), "{err}");
}

#[test]
fn thread_count_does_not_change_output() {
    let cfg = small_desk(4);
    let render = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let report = pool.install(|| run_experiment(&cfg)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_report(&report, dir.path()).unwrap();
        let OutputFiles { runs, targets, aggregate } = files;
        [runs, targets, aggregate].map(|p| fs::read(p).unwrap())
    };
    assert_eq!(render(1), render(4));
}
