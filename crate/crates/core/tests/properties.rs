use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use wnos_core::abstraction::{build_default_schema, ElementId};
use wnos_core::instantiation::{build_pool, hash_id, instantiate_global, DIConfig, InstancePool, InstantiationError};
use wnos_core::netsim::{ChannelModel, LinkGeometry};

fn choose(n: u64, k: u64) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn config() -> impl Strategy<Value = DIConfig> {
    (1usize..=8)
        .prop_flat_map(|n| (Just(n), 1..=n, any::<u64>(), 1usize..=20))
        .prop_map(|(n_global, n_local, rng_seed, max_resample)| DIConfig {
            n_global,
            n_local,
            rng_seed,
            max_resample,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn local_draws_obey_both_rules(cfg in config(), extra in 0u128..3) {
        let schema = build_default_schema();
        let v = schema.virtual_element(&"lnkses".into()).unwrap();
        let g = schema.virtual_element(&"netses".into()).unwrap();
        let mut pool = InstancePool::new(cfg).unwrap();
        let mother = instantiate_global(g, &cfg).unwrap();
        let cap = choose(cfg.n_global as u64, cfg.n_local as u64);
        let requests = cap.min(40) + if cap <= 40 { extra } else { 0 };
        let mut seen = BTreeSet::new();
        for r in 1..=requests {
            match pool.instantiate_local(v, &mother) {
                Ok(i) => {
                    prop_assert!(r <= cap);
                    prop_assert_eq!(i.members.len(), cfg.n_local);
                    prop_assert!(i.members.windows(2).all(|w| w[0] < w[1]));
                    prop_assert!(seen.insert(i.members.clone()));
                }
                Err(InstantiationError::ExhaustedResampling { capacity, .. }) => {
                    prop_assert!(r > cap);
                    prop_assert_eq!(capacity, cap);
                }
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
        pool.check_invariants().unwrap();
    }

    #[test]
    fn hash_ignores_order(mut members in proptest::collection::vec(0u32..50, 1..12), seed in any::<u64>()) {
        let h = hash_id(&members).unwrap();
        let n = members.len();
        members.rotate_left((seed as usize) % n);
        members.reverse();
        prop_assert_eq!(hash_id(&members).unwrap(), h);
    }

    #[test]
    fn derived_pool_is_consistent(seed in any::<u64>()) {
        let schema = build_default_schema();
        let referenced: BTreeSet<ElementId> = ["lnkses".into()].into_iter().collect();
        let cfg = DIConfig { n_global: 8, n_local: 3, rng_seed: seed, max_resample: 100 };
        let pool = build_pool(&schema, &referenced, cfg, &BTreeMap::new()).unwrap();
        for l in 0..8u32 {
            for s in &pool.local("lnkses", l).unwrap().members {
                prop_assert!(pool.local("seslnk", *s).unwrap().members.contains(&l));
            }
        }
    }

    #[test]
    fn capacity_is_monotone_in_power(
        xs in proptest::collection::vec((0.0f64..60.0, 0.0f64..60.0), 3),
        gains in proptest::collection::vec(0.0f64..30.0, 3),
        who in 0usize..3,
        bump in 0.1f64..10.0,
    ) {
        let m = ChannelModel::default();
        // Receivers 8 m east of their transmitters, all on one band.
        let gain = (0..3)
            .map(|i| (0..3).map(|j| {
                let (tx, rx) = (xs[i], (xs[j].0 + 8.0, xs[j].1));
                m.gain(((tx.0 - rx.0).powi(2) + (tx.1 - rx.1).powi(2)).sqrt())
            }).collect())
            .collect();
        let geo = LinkGeometry { gain, band: vec![0; 3], scale: vec![1.0; 3], model: m };
        let active = [true; 3];
        let mut up = gains.clone();
        up[who] = (up[who] + bump).min(30.0);
        prop_assert!(geo.capacity(who, &up, &active) >= geo.capacity(who, &gains, &active));
        for v in (0..3).filter(|v| *v != who) {
            prop_assert!(geo.capacity(v, &up, &active) <= geo.capacity(v, &gains, &active));
        }
    }
}

#[test]
fn symmetric_pair_has_equal_capacities() {
    let m = ChannelModel::default();
    let d = |a: f64| m.gain(a);
    let geo = LinkGeometry {
        gain: vec![vec![d(10.0), d(14.0)], vec![d(14.0), d(10.0)]],
        band: vec![0, 0],
        scale: vec![1.0, 1.0],
        model: m,
    };
    let g = [17.0, 17.0];
    assert_eq!(geo.capacity(0, &g, &[true; 2]), geo.capacity(1, &g, &[true; 2]));
}
