use std::fs;

use chrono::{TimeZone, Utc};
use recallgraph_core::harness::generate_scenario;
use recallgraph_core::memory::{Fault, MemoryError, MemoryStore, RetrievalQuery};
use recallgraph_core::perception::{fold_frames, PerceptionConfig};
use recallgraph_core::scene_graph::{canonical_encode, SceneGraph};

fn graphs(template: &str, seed: u64) -> Vec<SceneGraph> {
    let g = generate_scenario(template, seed).unwrap();
    fold_frames(&g.frames, &PerceptionConfig::default()).unwrap()
}

fn when(minute: u32) -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 5, 2, 9, minute, 0).unwrap()
}

fn sgseq_files(root: &std::path::Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(root.join("episodes"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".sgseq"))
        .collect();
    v.sort();
    v
}

#[test]
fn crash_points_leave_index_and_visible_files_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = MemoryStore::open(dir.path()).unwrap();
    let first = store
        .store_episode(&graphs("stew_5step", 1), "beef stew", "kitchen", when(0))
        .unwrap();
    let index_before = fs::read_to_string(dir.path().join("index.tsv")).unwrap();
    let files_before = sgseq_files(dir.path());

    for (i, fault) in [Fault::BeforeEpisodeRename, Fault::BeforeIndexRename]
        .into_iter()
        .enumerate()
    {
        store.inject_fault(Some(fault));
        let err = store
            .store_episode(&graphs("lab_prep", 2), "buffer prep", "lab", when(10 + i as u32))
            .unwrap_err();
        assert!(matches!(err, MemoryError::InjectedFault(f) if f == fault));
        assert_eq!(store.len(), 1);
        assert_eq!(fs::read_to_string(dir.path().join("index.tsv")).unwrap(), index_before);
        assert_eq!(sgseq_files(dir.path()), files_before);

        let reopened = MemoryStore::open(dir.path()).unwrap();
        assert_eq!(reopened.list(), vec![first.clone()]);
        let hits = reopened.retrieve(&RetrievalQuery::keywords(&["buffer"]), 3).unwrap();
        assert!(hits.iter().all(|h| h.score == 0.0));
    }

    store.inject_fault(None);
    let second = store
        .store_episode(&graphs("lab_prep", 2), "buffer prep", "lab", when(20))
        .unwrap();
    let reopened = MemoryStore::open(dir.path()).unwrap();
    assert_eq!(reopened.len(), 2);
    assert!(reopened.contains(&second.id));
}

#[test]
fn directory_round_trip_preserves_encodings() {
    let dir = tempfile::tempdir().unwrap();
    let gs = graphs("organize_closet", 4);
    let meta = {
        let mut store = MemoryStore::open(dir.path()).unwrap();
        store.store_episode(&gs, "closet", "bedroom", when(0)).unwrap()
    };
    let store = MemoryStore::open(dir.path()).unwrap();
    let ep = store.load_into_working_memory(&meta.id).unwrap();
    assert_eq!(ep.meta, meta);
    assert_eq!(ep.graphs.len(), gs.len());
    for (a, b) in ep.graphs.iter().zip(&gs) {
        assert_eq!(canonical_encode(a).unwrap(), canonical_encode(b).unwrap());
    }
}

#[test]
fn missing_index_is_rebuilt_and_missing_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = {
        let mut store = MemoryStore::open(dir.path()).unwrap();
        let a = store
            .store_episode(&graphs("stew_5step", 1), "stew", "kitchen", when(0))
            .unwrap();
        let b = store
            .store_episode(&graphs("stew_5step", 2), "stew again", "kitchen", when(1))
            .unwrap();
        (a, b)
    };
    let index = fs::read_to_string(dir.path().join("index.tsv")).unwrap();
    fs::remove_file(dir.path().join("index.tsv")).unwrap();
    let store = MemoryStore::open(dir.path()).unwrap();
    assert_eq!(store.index_text(), index);
    assert!(store.contains(&a.id) && store.contains(&b.id));

    fs::remove_file(dir.path().join("episodes").join(format!("{}.sgseq", a.id))).unwrap();
    let err = MemoryStore::open(dir.path()).unwrap_err();
    assert!(
        matches!(err, MemoryError::Integrity { ref file, .. } if file.contains(&a.id)),
        "{err}"
    );
}

#[test]
fn corrupted_episode_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = MemoryStore::open(dir.path()).unwrap();
    let meta = store
        .store_episode(&graphs("stew_5step", 3), "stew", "kitchen", when(0))
        .unwrap();
    let path = dir.path().join("episodes").join(format!("{}.sgseq", meta.id));
    let mut bytes = fs::read(&path).unwrap();
    let last = bytes.len() - 3;
    bytes[last] ^= 0x01;
    fs::write(&path, bytes).unwrap();
    let err = store.load_into_working_memory(&meta.id).unwrap_err();
    match err {
        MemoryError::Integrity { file, .. } => assert!(file.ends_with(&format!("{}.sgseq", meta.id))),
        other => panic!("unexpected {other}"),
    }
}
