use pns_core::distributions::default_n_max;
use pns_core::montecarlo::{
    distinguishability_report, extended_plan, goodness_of_fit, read_histogram_csv, simulate, SimulationConfig,
    SimulationMode,
};
use pns_core::transport::TransitionRows;
use pns_core::ChannelParams;

const N: u64 = 1_000_000;

fn run(mu: f64, eta: f64, seed: u64, mode: SimulationMode) -> pns_core::montecarlo::SimulationResult {
    simulate(&SimulationConfig {
        params: ChannelParams::new(mu, eta).unwrap(),
        pulses: N,
        seed,
        mode,
    })
    .unwrap()
}

#[test]
fn lossy_vacuum_within_four_standard_errors() {
    let r = run(0.1, 0.1, 11, SimulationMode::LossyChannel);
    let p: f64 = (-0.01f64).exp();
    let se = (p * (1.0 - p) / N as f64).sqrt();
    assert!((r.empirical_p(0) - p).abs() < 4.0 * se);
    assert_eq!(r.counts.iter().sum::<u64>(), N);
    assert_eq!(r.tagged_count, 0);
    let bound = 3.0 * (default_n_max(0.1) as f64 / N as f64).sqrt();
    assert!(r.tv_distance_to_analytic < bound);
}

#[test]
fn extended_attack_looks_poissonian() {
    let r = run(0.1, 0.1, 12, SimulationMode::ExtendedPns);
    for (m, z) in r.per_bin_z.iter().enumerate() {
        assert!(z.abs() <= 4.0, "bin {m}: z = {z}");
    }
    assert!(!goodness_of_fit(&r).distinguishable);

    // non-vacuum conservation, statistically and structurally
    let p = -(-0.01f64).exp_m1();
    let se = (p * (1.0 - p) / N as f64).sqrt();
    let frac = r.nonvacuum_count as f64 / N as f64;
    assert!((frac - p).abs() < 4.0 * se);
    assert!(!r.transitions.keys().any(|&(n, m)| n >= 2 && m == 0));
    let plan = extended_plan(&ChannelParams::new(0.1, 0.1).unwrap()).unwrap();
    for n in 2..plan.rows().len() {
        assert_eq!(plan.rows()[n][0], 0.0);
    }

    // every tagged pulse reached Bob
    assert_eq!(r.tagged_count, r.delivered_from_multiphoton());
    assert!(r.tagged_count <= r.nonvacuum_count + r.blocked_singles);
    assert!(r.tagged_count > 0);
}

#[test]
fn base_attack_is_visible_and_redistribution_hides_it() {
    let lossy = run(0.1, 0.1, 100, SimulationMode::LossyChannel);
    let base = run(0.1, 0.1, 101, SimulationMode::BasePns);
    let ext = run(0.1, 0.1, 102, SimulationMode::ExtendedPns);
    assert!(distinguishability_report(&lossy, &base).unwrap().distinguishable);
    assert!(!distinguishability_report(&lossy, &ext).unwrap().distinguishable);
    assert!(goodness_of_fit(&base).distinguishable);
    // the base attack has the right vacuum but the wrong two-photon rate
    assert!(base.per_bin_z[0].abs() < 4.0);
    assert!(base.per_bin_z[2] > 4.0);
}

#[test]
fn histogram_csv_parses_back() {
    let r = simulate(&SimulationConfig {
        params: ChannelParams::new(0.3, 0.2).unwrap(),
        pulses: 50_000,
        seed: 3,
        mode: SimulationMode::ExtendedPns,
    })
    .unwrap();
    let mut buf = Vec::new();
    r.write_histogram_csv(&mut buf).unwrap();
    let rows = read_histogram_csv(buf.as_slice()).unwrap();
    assert_eq!(rows.len(), r.counts.len());
    for (m, row) in rows.iter().enumerate() {
        assert_eq!(row.n, m);
        assert_eq!(row.count, r.counts[m]);
        assert_eq!(row.empirical_p.to_bits(), r.empirical_p(m).to_bits());
        assert_eq!(row.analytic_p.to_bits(), r.reference.prob(m).to_bits());
        assert_eq!(row.z.to_bits(), r.per_bin_z[m].to_bits());
    }
}
