use std::fs;
use std::path::Path;

use velogen_core::cad::{parse_xml, CadTemplate};
use velogen_core::constraints::{check, RuleChecker, RuleSet};
use velogen_core::embed::read_embeddings;
use velogen_core::pipeline::{
    generate, generate_in_memory, image_path, load_dataset, verify, DatasetManifest, DatasetStatus, GenerateConfig,
    PipelineError, DESIGNS_CSV, EMBEDDINGS_FILE, FIRST_INDEX, MANIFEST_FILE, WORK_DIR,
};
use velogen_core::render::decode_png;
use velogen_core::sampler::sample_feasible;
use velogen_core::schema::DesignSchema;

fn cfg(n: u64, workers: usize) -> GenerateConfig {
    GenerateConfig {
        n,
        workers,
        views: 1,
        ..GenerateConfig::default()
    }
}

fn run(dir: &Path, c: &GenerateConfig) -> Result<DatasetManifest, PipelineError> {
    generate(&DesignSchema::reference(), &RuleSet::reference(), &CadTemplate::reference(), c, dir)
}

fn same_files(a: &Path, b: &Path, m: &DatasetManifest) {
    for rel in m.files.keys() {
        assert!(fs::read(a.join(rel)).unwrap() == fs::read(b.join(rel)).unwrap(), "{rel} differs");
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = run(a.path(), &cfg(450, 1)).unwrap();
    let mb = run(b.path(), &cfg(450, 3)).unwrap();
    assert!(ma.sampler.shards.len() >= 2);
    assert_eq!(ma.files, mb.files);
    assert_eq!(ma.counts, mb.counts);
    same_files(a.path(), b.path(), &ma);
    assert!(verify(a.path()).unwrap().ok());

    let mem = generate_in_memory(
        &DesignSchema::reference(),
        &RuleSet::reference(),
        &CadTemplate::reference(),
        &cfg(450, 2),
    )
    .unwrap();
    assert_eq!(mem.embeddings, read_embeddings(&a.path().join(EMBEDDINGS_FILE)).unwrap());
}

#[test]
fn dataset_holds_the_first_feasible_designs() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(dir.path(), &cfg(40, 2)).unwrap();
    assert_eq!(m.status, DatasetStatus::Complete);
    assert_eq!(m.counts.rendered, 40);
    assert!(m.counts.consistent());
    let ds = load_dataset(dir.path()).unwrap();
    let schema = DesignSchema::reference();
    let checker = RuleChecker::new(schema.clone(), RuleSet::reference());
    let (want, _) = sample_feasible(40, &schema, &checker, FIRST_INDEX, 1 << 20).unwrap();
    let want_ids: Vec<u64> = want.iter().map(|w| w.0).collect();
    assert_eq!(ds.ids, want_ids);
    for ((id, d), (_, w)) in ds.ids.iter().zip(&ds.designs).zip(&want) {
        assert!(check(d, &schema, &RuleSet::reference()).is_feasible());
        // CSV holds shortest round-trip decimals, so values come back exactly
        assert_eq!(d, w);
        let img = decode_png(&fs::read(image_path(dir.path(), *id)).unwrap()).unwrap();
        assert_eq!((img.width, img.height), (1070, 679));
    }
    let first = fs::read(dir.path().join("cad").join(format!("{:010}.bcadx", ds.ids[0]))).unwrap();
    assert!(parse_xml(&first).unwrap().1.is_empty());
    assert!(m.sampler.acceptance_rate > 0.0 && m.sampler.acceptance_rate < 1.0);
}

#[test]
fn resume_restores_missing_pieces() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let reference = run(a.path(), &cfg(450, 1)).unwrap();

    run(b.path(), &cfg(450, 1)).unwrap();
    // simulate an interrupted run: one shard's work record, some images and
    // the merged tables are gone and the manifest is back to in-progress
    let work: Vec<_> = fs::read_dir(b.path().join(WORK_DIR))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    fs::remove_file(&work[0]).unwrap();
    let ds = load_dataset(b.path()).unwrap();
    for id in ds.ids.iter().step_by(50) {
        fs::remove_file(image_path(b.path(), *id)).unwrap();
    }
    fs::remove_file(b.path().join(EMBEDDINGS_FILE)).unwrap();
    fs::remove_file(b.path().join(DESIGNS_CSV)).unwrap();
    let mut m = DatasetManifest::load(b.path()).unwrap();
    m.status = DatasetStatus::InProgress;
    m.save(b.path()).unwrap();
    assert!(matches!(load_dataset(b.path()), Err(PipelineError::Incomplete(_))));

    let resumed = run(b.path(), &cfg(450, 2)).unwrap();
    assert_eq!(resumed.files, reference.files);
    same_files(a.path(), b.path(), &reference);
    assert!(verify(b.path()).unwrap().ok());
}

#[test]
fn verify_reports_damage() {
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), &cfg(12, 1)).unwrap();
    let ds = load_dataset(dir.path()).unwrap();
    let png = image_path(dir.path(), ds.ids[3]);
    let mut bytes = fs::read(&png).unwrap();
    let k = bytes.len() / 2;
    bytes[k] ^= 0xff;
    fs::write(&png, bytes).unwrap();
    fs::remove_file(image_path(dir.path(), ds.ids[5])).unwrap();
    let r = verify(dir.path()).unwrap();
    assert!(!r.ok());
    assert_eq!(r.mismatched.len(), 1);
    assert_eq!(r.missing.len(), 1);
}

#[test]
fn empty_request_gives_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(dir.path(), &cfg(0, 4)).unwrap();
    assert_eq!(m.status, DatasetStatus::Complete);
    assert_eq!(m.counts.rendered, 0);
    let ds = load_dataset(dir.path()).unwrap();
    assert!(ds.designs.is_empty() && ds.embeddings.is_empty());
    assert!(verify(dir.path()).unwrap().ok());
}

#[test]
fn changed_settings_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), &cfg(5, 1)).unwrap();
    let other = GenerateConfig { seed: 9, ..cfg(5, 1) };
    assert!(matches!(run(dir.path(), &other), Err(PipelineError::Mismatch(_))));
    let loose = RuleSet::reference().with_disabled("R7");
    let err = generate(&DesignSchema::reference(), &loose, &CadTemplate::reference(), &cfg(5, 1), dir.path());
    assert!(matches!(err, Err(PipelineError::Mismatch(_))));
    // same settings again is a no-op resume
    run(dir.path(), &cfg(5, 1)).unwrap();
    assert!(dir.path().join(MANIFEST_FILE).is_file());
}

#[test]
fn attempt_cap_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = GenerateConfig {
        attempt_cap: Some(2000),
        ..cfg(2000, 1)
    };
    // the cap is checked between shards, before anything is rendered
    assert!(matches!(run(dir.path(), &c), Err(PipelineError::Sampler(_))));
    assert!(!dir.path().join(DESIGNS_CSV).exists());
}
