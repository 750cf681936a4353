use std::collections::BTreeSet;

use streamqa::dataset::{generate_paths, generate_paths_with, PathConfig};
use streamqa::store::{QaRecord, QaType, SegmentMeta, SessionManifest};
use streamqa::Exec;

fn qa(qa_id: u32, segment_id: u32, qa_type: QaType) -> QaRecord {
    QaRecord {
        qa_id,
        segment_id,
        qa_type,
        question: format!("question {qa_id}"),
        answer: format!("answer {qa_id}"),
        relevant_ids: BTreeSet::new(),
        relevance_scores: Default::default(),
    }
}

/// Two segments; the second offers four interchangeable streaming candidates
/// (equal scores against every basic), of which two are drawn.
fn free_pool() -> SessionManifest {
    let segments = (1..=2)
        .map(|s| SegmentMeta {
            segment_id: s,
            start_s: (s - 1) as f64 * 10.0,
            end_s: s as f64 * 10.0,
            embedding_ref: format!("seg_{s}.cgse").into(),
        })
        .collect();
    let mut pool = vec![
        qa(1, 1, QaType::Objects),
        qa(2, 1, QaType::Actions),
        qa(3, 2, QaType::Attributes),
        qa(4, 2, QaType::Objects),
    ];
    for id in 5..=8 {
        let mut q = qa(id, 2, QaType::ObjectTracking);
        q.relevance_scores = [(1, 5.0), (2, 5.0)].into();
        q.relevant_ids = [1, 2].into();
        pool.push(q);
    }
    SessionManifest::new("free", segments, pool)
}

#[test]
fn paths_usually_differ_when_sampling_is_free() {
    let m = free_pool();
    m.validate().unwrap();
    let diverse = (0..1000u64)
        .filter(|&seed| {
            let paths = generate_paths(&m, &PathConfig { seed, ..PathConfig::default() }).unwrap();
            let distinct: BTreeSet<Vec<u32>> = paths.iter().map(|p| p.qa_ids()).collect();
            distinct.len() >= 2
        })
        .count();
    assert!(diverse >= 990, "{diverse}/1000");
}

#[test]
fn paths_are_chronological_and_prefix_closed() {
    let m = free_pool();
    for seed in 0..50 {
        for path in generate_paths(&m, &PathConfig { seed, ..PathConfig::default() }).unwrap() {
            let mut seen = BTreeSet::new();
            let mut last_segment = 0;
            for e in &path.entries {
                assert!(e.segment_id >= last_segment);
                assert!(e.relevant_ids.is_subset(&seen));
                assert!(seen.insert(e.qa_id), "duplicate qa {}", e.qa_id);
                last_segment = e.segment_id;
            }
            assert_eq!(path.entries.len(), 6);
        }
    }
}

#[test]
fn sequential_and_parallel_paths_agree() {
    let m = free_pool();
    let config = PathConfig { num_paths: 16, seed: 99, ..PathConfig::default() };
    assert_eq!(
        generate_paths_with(&m, &config, Exec::Sequential).unwrap(),
        generate_paths_with(&m, &config, Exec::Parallel).unwrap()
    );
}
