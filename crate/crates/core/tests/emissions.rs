mod support;

use std::sync::Arc;

use proptest::prelude::*;

use intersim::demand::DemandSpec;
use intersim::emissions::{aggregate, emission_rate, sample_world, Scope};
use intersim::policies::FcfsController;
use intersim::topology::paper4;
use intersim::{EmissionCoefficients, IdmParams, Pollutant, World};

use support::{emission_magnitude, emission_oracle};

proptest! {
    #[test]
    fn rates_are_non_negative_and_match_oracle(v in 0.0f64..60.0, a in -10.0f64..10.0) {
        let c = EmissionCoefficients::pc_g_eu4();
        for p in Pollutant::ALL {
            let got = emission_rate(&c, p, v, a);
            prop_assert!(got >= 0.0);
            let want = emission_oracle(p.index(), v, a);
            let tol = 1e-12 * emission_magnitude(p.index(), v, a);
            prop_assert!((got - want).abs() <= tol, "{p}: {got} vs {want}");
        }
    }
}

#[test]
fn cruise_fuel_dips_then_rises() {
    // d/dv of the cruise polynomial vanishes at v = 149 / (2 * 9.014).
    let vmin = 149.0 / (2.0 * 9.014);
    let c = EmissionCoefficients::pc_g_eu4();
    let fuel = |v: f64| emission_rate(&c, Pollutant::Fuel, v, 0.0);
    let grid = |lo: f64, hi: f64| (0..=400).map(move |i| lo + (hi - lo) * i as f64 / 400.0);
    let rising: Vec<f64> = grid(vmin, 40.0).map(fuel).collect();
    assert!(rising.windows(2).all(|w| w[1] >= w[0]));
    let falling: Vec<f64> = grid(5.0, vmin).map(fuel).collect();
    assert!(falling.windows(2).all(|w| w[1] <= w[0]));
    assert!(fuel(5.0) > fuel(vmin));
}

#[test]
fn network_mean_lies_within_vehicle_rates() {
    let net = Arc::new(paper4());
    let demand = DemandSpec::from_network(&net, 0.5, 8).unwrap();
    let mut w = World::new(net, Some(demand), IdmParams::default(), 1.0).unwrap();
    let c = EmissionCoefficients::pc_g_eu4();
    for t in 0..200 {
        w.tick(&mut FcfsController).unwrap();
        if t % 20 != 19 {
            continue;
        }
        let samples = sample_world(&w, &c);
        let mean = aggregate(&samples, Scope::Network, &w).unwrap().expect("vehicles present");
        for p in Pollutant::ALL {
            let xs = samples.iter().map(|s| s.sample.get(p));
            let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
            let m = mean.get(p);
            assert!(lo - 1e-12 <= m && m <= hi + 1e-12, "{p}: {m} outside [{lo}, {hi}]");
        }
        for ix in 0..4 {
            let scoped: Vec<_> = samples.iter().filter(|s| s.location.scope() == Some(ix)).collect();
            let got = aggregate(&samples, Scope::Intersection(ix), &w).unwrap();
            assert_eq!(got.is_some(), !scoped.is_empty());
        }
    }
}
