use std::collections::BTreeMap;
use std::path::PathBuf;

use polypaug_core::metrics::RankAverage;
use polypaug_review::service::report;
use polypaug_review::{RankingStore, ReviewConfig, ReviewError, ReviewService, ReviewSet, Submission};
use proptest::prelude::*;

fn sets(methods: &[String], n: usize) -> Vec<ReviewSet> {
    (0..n)
        .map(|i| ReviewSet {
            set_id: format!("set-{i}"),
            background_id: format!("bg{i}"),
            condition_id: format!("c{i}"),
            images: methods.iter().map(|m| (m.clone(), PathBuf::from(format!("/x/{i}/{m}.png")))).collect(),
            background: Some(PathBuf::from(format!("/x/{i}/bg.png"))),
            reference: None,
        })
        .collect()
}

fn service(methods: &[String], similarity: &[String], n: usize, seed: u64) -> ReviewService {
    let config = ReviewConfig {
        seed,
        salt: format!("salt{seed}"),
        similarity_methods: similarity.to_vec(),
        ..ReviewConfig::default()
    };
    ReviewService::new(config, sets(methods, n), RankingStore::in_memory()).unwrap()
}

/// Submits `perm` (indices into presentation order) as the naturalness ranking.
fn submit_perm(svc: &ReviewService, session: &str, perm: &[usize]) -> polypaug_review::Result<()> {
    let view = svc.next_set(session)?.expect("pending set");
    let naturalness = view
        .images
        .iter()
        .zip(perm)
        .map(|(im, &p)| (im.label.clone(), p as u32 + 1))
        .collect();
    let similarity = view
        .images
        .iter()
        .filter(|im| im.similarity)
        .enumerate()
        .map(|(i, im)| (im.label.clone(), i as u32 + 1))
        .collect();
    svc.submit(&Submission {
        session_id: session.into(),
        set_id: view.set_id,
        naturalness,
        similarity,
    })
    .map(|_| ())
}

fn method_names() -> impl Strategy<Value = Vec<String>> {
    prop::collection::btree_set("[g-z]{3,8}", 2..6).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rater_responses_never_name_methods(methods in method_names(), seed in any::<u64>(), n in 1usize..5) {
        let sim = methods[..methods.len() / 2].to_vec();
        let svc = service(&methods, &sim, n, seed);
        let info = svc.open_session("rater").unwrap();
        let mut texts = vec![serde_json::to_string(&info).unwrap()];
        while let Some(view) = svc.next_set(&info.session_id).unwrap() {
            texts.push(serde_json::to_string(&view).unwrap());
            let perm: Vec<usize> = (0..methods.len()).collect();
            submit_perm(&svc, &info.session_id, &perm).unwrap();
        }
        for t in &texts {
            for m in &methods {
                prop_assert!(!t.contains(m.as_str()), "{} in {}", m, t);
            }
        }
    }

    #[test]
    fn completion_is_monotone_and_duplicates_rejected(seed in any::<u64>(), n in 1usize..6, attempts in prop::collection::vec(any::<bool>(), 1..12)) {
        let methods: Vec<String> = ["a1", "b2", "c3"].iter().map(|s| s.to_string()).collect();
        let svc = service(&methods, &[], n, seed);
        let info = svc.open_session("r").unwrap();
        let mut last = 0;
        let mut done_sets = vec![];
        for advance in attempts {
            if advance {
                if let Some(v) = svc.next_set(&info.session_id).unwrap() {
                    done_sets.push(v.set_id.clone());
                    submit_perm(&svc, &info.session_id, &[2, 0, 1]).unwrap();
                }
            } else if let Some(set) = done_sets.last() {
                let again = svc.submit(&Submission {
                    session_id: info.session_id.clone(),
                    set_id: set.clone(),
                    naturalness: BTreeMap::new(),
                    similarity: BTreeMap::new(),
                });
                let is_dup = matches!(again, Err(ReviewError::DuplicateSubmission { .. }));
                prop_assert!(is_dup);
            }
            let now = svc.store().state().sessions[&info.session_id].completed.len();
            prop_assert!(now >= last);
            last = now;
        }
        prop_assert_eq!(last, done_sets.len());
    }

    #[test]
    fn report_ignores_record_order(seed in any::<u64>(), perms in prop::collection::vec(Just(vec![0usize, 1, 2, 3]).prop_shuffle(), 1..6)) {
        let methods: Vec<String> = ["m1", "m2", "m3", "m4"].iter().map(|s| s.to_string()).collect();
        let svc = service(&methods, &methods[2..], perms.len(), seed);
        let info = svc.open_session("r").unwrap();
        for p in &perms {
            submit_perm(&svc, &info.session_id, p).unwrap();
        }
        let records = svc.store().state().records.clone();
        let mut reversed = records.clone();
        reversed.reverse();
        let none = BTreeMap::new();
        prop_assert_eq!(report(&records, &methods, &none).unwrap(), report(&reversed, &methods, &none).unwrap());
        prop_assert_eq!(svc.report().unwrap(), report(&records, &methods, &none).unwrap());
    }
}

#[test]
fn listed_order_ranking_averages_to_assigned_ranks() {
    let methods: Vec<String> = ["cp", "pb", "sd", "v1", "v2"].iter().map(|s| s.to_string()).collect();
    let svc = service(&methods, &methods[2..], 1, 0);
    let info = svc.open_session("r").unwrap();
    let view = svc.next_set(&info.session_id).unwrap().unwrap();
    // map presentation labels back through the opaque ids to rank methods 1..5 in listed order
    let ids: BTreeMap<String, String> = methods
        .iter()
        .map(|m| {
            let path = PathBuf::from(format!("/x/0/{m}.png"));
            let id = view.images.iter().find(|im| svc.image_path(&im.image_id).unwrap() == &path).unwrap();
            (m.clone(), id.label.clone())
        })
        .collect();
    let naturalness = methods.iter().enumerate().map(|(i, m)| (ids[m].clone(), i as u32 + 1)).collect();
    let similarity = methods[2..].iter().enumerate().map(|(i, m)| (ids[m].clone(), i as u32 + 1)).collect();
    svc.submit(&Submission {
        session_id: info.session_id,
        set_id: view.set_id,
        naturalness,
        similarity,
    })
    .unwrap();
    let rep = svc.report().unwrap();
    for (i, row) in rep.rows.iter().enumerate() {
        assert_eq!(row.method, methods[i]);
        assert_eq!(row.naturalness, RankAverage::Value(i as f64 + 1.0));
        let expected = if i < 2 { RankAverage::NotApplicable } else { RankAverage::Value(i as f64 - 1.0) };
        assert_eq!(row.similarity, expected);
    }
}

#[test]
fn disagreeing_raters_average() {
    let methods: Vec<String> = ["x", "y"].iter().map(|s| s.to_string()).collect();
    let svc = service(&methods, &[], 1, 4);
    for (rater, x_rank) in [("one", 1u32), ("two", 2)] {
        let info = svc.open_session(rater).unwrap();
        let view = svc.next_set(&info.session_id).unwrap().unwrap();
        let naturalness = view
            .images
            .iter()
            .map(|im| {
                let is_x = svc.image_path(&im.image_id).unwrap().ends_with("x.png");
                (im.label.clone(), if is_x { x_rank } else { 3 - x_rank })
            })
            .collect();
        svc.submit(&Submission {
            session_id: info.session_id,
            set_id: view.set_id,
            naturalness,
            similarity: BTreeMap::new(),
        })
        .unwrap();
    }
    let rep = svc.report().unwrap();
    assert_eq!(rep.rows[0].naturalness, RankAverage::Value(1.5));
    assert_eq!(rep.raters, 2);
}

#[test]
fn same_seed_same_blinding() {
    let methods: Vec<String> = ["p", "q", "r", "s"].iter().map(|s| s.to_string()).collect();
    let a = service(&methods, &[], 3, 8);
    let b = service(&methods, &[], 3, 8);
    let (ia, ib) = (a.open_session("z").unwrap(), b.open_session("z").unwrap());
    assert_eq!(ia, ib);
    assert_eq!(a.next_set(&ia.session_id).unwrap(), b.next_set(&ib.session_id).unwrap());
}
