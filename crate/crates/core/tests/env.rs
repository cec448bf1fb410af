use std::collections::HashMap;
use std::sync::Arc;

use intersim::env::{obs_dim, observe, observe_agents};
use intersim::policies::FcfsController;
use intersim::topology::{paper4, parse_scenario};
use intersim::world::SegmentKind;
use intersim::{Action, DemandSpec, Env, EpisodeConfig, IdmParams, VehicleId, VehicleKind, VehicleState, World};

const TWIN: &str = r#"
[network]
name = "twin"

[intersection.A]
incoming_lanes = 8
demand_veh_per_hr = 600

[intersection.B]
incoming_lanes = 8
demand_veh_per_hr = 600
"#;

fn rv(id: u64, pos: f64, speed: f64, wait: f64, movement: &str) -> VehicleState {
    let mut v = VehicleState::new(VehicleId(id), VehicleKind::Robot, movement.parse().unwrap(), 0.0);
    v.pos_m = pos;
    v.speed_mps = speed;
    v.wait_s = wait;
    v
}

#[test]
fn mirrored_agents_see_the_same_observation() {
    let net = Arc::new(parse_scenario(TWIN).unwrap());
    let mut w = World::new(net, None, IdmParams::default(), 1.0).unwrap();
    let layout =
        [(0usize, 195.0, 0.0, 30.0, "N-S"), (0, 185.0, 0.0, 12.0, "N-S"), (2, 190.0, 1.0, 4.0, "E-S"), (5, 10.0, 13.0, 0.0, "S-L")];
    for ix in 0..2 {
        for (k, &(lane, pos, speed, wait, movement)) in layout.iter().enumerate() {
            let chain = w.chain_index(ix, lane);
            let m = w.chains()[chain].movement.to_string();
            assert_eq!(m, movement, "layout assumes the default lane split");
            w.place(chain, SegmentKind::Approach, rv((ix * 100 + k) as u64, pos, speed, wait, movement));
        }
    }
    let a = observe(&w, 0, 120.0);
    let b = observe(&w, 1, 120.0);
    assert_eq!(a, b);
    assert!(a.to_vec().iter().any(|x| *x != 0.0));

    let heads = w.queue_heads();
    let agents = observe_agents(&w, &heads, 120.0);
    let per_ix: Vec<_> = ["A", "B"].iter().map(|id| agents.iter().filter(|a| a.intersection == *id).collect::<Vec<_>>()).collect();
    assert_eq!(per_ix[0].len(), per_ix[1].len());
    for (x, y) in per_ix[0].iter().zip(&per_ix[1]) {
        assert_eq!(x.obs, y.obs);
        assert_eq!(x.movement, y.movement);
    }
}

#[test]
fn episode_contract_holds_throughout() {
    let net = Arc::new(paper4());
    let demand = DemandSpec::from_network(&net, 0.7, 13).unwrap();
    let config = EpisodeConfig { horizon_ticks: 300, warmup_s: 50.0, ..EpisodeConfig::default() };
    let mut env = Env::new(net.clone(), demand, config, Box::new(FcfsController)).unwrap();
    let dim = obs_dim(&net);
    assert_eq!(dim, 16 + 64);
    let mut toggle = false;
    let mut rewards = 0;
    while !env.done() {
        let agents = env.observations();
        assert!(agents.iter().all(|a| a.obs.len() == dim));
        assert_eq!(agents, env.observations(), "observing changed the state");
        let actions: HashMap<VehicleId, Action> = agents
            .iter()
            .map(|a| {
                toggle = !toggle;
                (a.id, if toggle { Action::Go } else { Action::Stop })
            })
            .collect();
        let t = env.step(&actions).unwrap();
        assert_eq!(t.rewards.len(), actions.len());
        for r in &t.rewards {
            assert!((-2.0..=1.0).contains(&r.terms.total), "{r:?}");
            assert_eq!(r.action, actions[&r.id]);
        }
        assert!(t.info.conflicts.is_empty());
        rewards += t.rewards.len();
    }
    assert!(rewards > 0);
    assert_eq!(env.world().tick_count(), 300);
}
