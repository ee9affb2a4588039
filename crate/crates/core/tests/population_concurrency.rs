use std::thread;

use nexus_core::backends::ProverOutcome;
use nexus_core::population::{goal_key, MatchResult, PopulationStore, SketchId, SketchRecord};
use nexus_core::rating::GibbsConfig;
use nexus_core::selection::{select_parent, PUCBConfig};
use nexus_core::sketch::parse_sketch;

fn store_with(n: u64) -> PopulationStore {
    let store = PopulationStore::new(GibbsConfig {
        n_samples: 100,
        burn_in: 20,
        thinning: 5,
        seed: 1,
    });
    for i in 0..n {
        let sketch = parse_sketch(&format!("lemma l : {i} = {i} := sorry\n")).unwrap();
        let id = store
            .insert_sketch(SketchRecord::new(store.allocate_id(), sketch, None))
            .unwrap();
        store.set_rating(id, vec![1.0 + i as f64]).unwrap();
    }
    store
}

#[test]
fn concurrent_selections_each_count_one_visit() {
    const W: usize = 16;
    const ROUNDS: usize = 25;
    let store = store_with(10);
    let cfg = PUCBConfig::default();
    thread::scope(|s| {
        for _ in 0..W {
            s.spawn(|| {
                for _ in 0..ROUNDS {
                    select_parent(&store, &cfg).unwrap();
                }
            });
        }
    });
    let total: u64 = store.ids().iter().map(|id| store.get(*id).unwrap().visits).sum();
    assert_eq!(total, (W * ROUNDS) as u64);
}

#[test]
fn concurrent_inserts_get_distinct_ids() {
    let store = store_with(0);
    let ids: Vec<SketchId> = thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|t| {
                let store = &store;
                s.spawn(move || {
                    (0..20)
                        .map(|k| {
                            let sketch = parse_sketch(&format!("lemma l : {t} = {k} := sorry\n")).unwrap();
                            store
                                .insert_sketch(SketchRecord::new(store.allocate_id(), sketch, None))
                                .unwrap()
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    let mut sorted = ids.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), 160);
    assert_eq!(store.len(), 160);
}

#[test]
fn concurrent_matches_are_all_kept_and_rated() {
    let store = store_with(6);
    thread::scope(|s| {
        for t in 0..4u64 {
            let store = &store;
            s.spawn(move || {
                for k in 0..5u64 {
                    let a = SketchId((t + k) % 6);
                    let b = SketchId((t + k + 1) % 6);
                    store
                        .record_match(MatchResult::strict(vec![a, b], format!("rater-{t}")))
                        .unwrap();
                }
            });
        }
    });
    assert_eq!(store.match_count(), 20);
    store.refresh_ratings().unwrap();
    for id in store.ids() {
        assert!(store.get(id).unwrap().rating.is_rated());
    }
}

#[test]
fn concurrent_goal_stores_keep_one_verdict() {
    let store = store_with(0);
    let key = goal_key("⊢ 1 + 1 = 2");
    thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| {
                store
                    .goal_store(key, ProverOutcome::failed("budget exhausted"))
                    .unwrap();
                store.goal_store(key, ProverOutcome::proved("eval")).unwrap();
            });
        }
    });
    assert_eq!(store.goal_cache_len(), 1);
    assert!(store.goal_peek(&key).unwrap().outcome.is_verdict());
}
