use std::collections::BTreeSet;

use woundsev::dataset::{
    carve_validation, generate_fixture, load_images, parse_manifest, split_by_group, FixtureSpec, Partition, RoiRef,
};
use woundsev::model::{build_single, io, BackboneName, BackboneRegistry};
use woundsev::roi::{augment_set, prepare_refs, ChannelSelection};
use woundsev::train::{self, CheckpointPolicy, Example, TaskDescriptor, TrainingConfig};
use woundsev::{SeverityClass, ZoomChannel};

fn examples(samples: &[woundsev::RoiSample]) -> Vec<Example> {
    samples.iter().map(|s| Example { inputs: vec![s.raster.clone()], label: s.label.index() }).collect()
}

#[test]
fn fixture_to_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = generate_fixture(&FixtureSpec::balanced(20, 96).with_boxes(1, 2), 21).unwrap();
    let manifest_path = fixture.write(dir.path()).unwrap();

    // the written manifest and rasters load back to the same records
    let records = parse_manifest(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
    assert_eq!(records, fixture.records());
    let images = load_images(&records, dir.path()).unwrap();

    let split = split_by_group(&records, 0.8, 1).unwrap();
    let (train_refs, val_refs) = carve_validation(&split.train_val, 0.2, 1).unwrap();
    let groups = |refs: &[RoiRef]| refs.iter().map(|r| r.group_id.clone()).collect::<BTreeSet<_>>();
    assert!(groups(&train_refs).is_disjoint(&groups(&val_refs)));
    assert!(groups(&split.train_val).is_disjoint(&groups(&split.test)));

    // single-channel experiments are always tested on Z0
    let zoomed = ChannelSelection::Single(ZoomChannel::Z1);
    assert_eq!(zoomed.channels_for(Partition::Train), vec![ZoomChannel::Z1]);
    assert_eq!(zoomed.channels_for(Partition::Test), vec![ZoomChannel::Z0]);

    let channel = ChannelSelection::Single(ZoomChannel::Z0);
    let train_set = augment_set(&prepare_refs(&images, &train_refs, ZoomChannel::Z0).unwrap()).unwrap();
    assert_eq!(train_set.len(), 6 * train_refs.len());
    let val_set = prepare_refs(&images, &val_refs, ZoomChannel::Z0).unwrap();
    let test_set = prepare_refs(&images, &split.test, ZoomChannel::Z0).unwrap();

    let registry = BackboneRegistry::new().with_weights_dir(None);
    let mut handle = build_single(&registry, BackboneName::ToySmall, 3, vec![16]).unwrap();
    let config = TrainingConfig { epochs: 15, seed: 4, ..TrainingConfig::default() };
    let outcome = train::train(&mut handle, &examples(&train_set), &examples(&val_set), &config).unwrap();
    assert_eq!(outcome.history.epochs.len(), 15);

    let best = outcome.checkpoint(CheckpointPolicy::BestValAccuracy);
    let best_handle = handle.with_head(best.head.clone()).unwrap();

    // checkpoints survive a save/load round trip bit for bit
    let ck_dir = dir.path().join("ck");
    io::save(&best_handle, &ck_dir).unwrap();
    let loaded = io::load(&registry, &ck_dir).unwrap();
    assert_eq!(loaded, best_handle);

    let task = TaskDescriptor {
        classes: SeverityClass::ALL.to_vec(),
        channel,
        model: loaded.spec().clone(),
        checkpoint: Some(CheckpointPolicy::BestValAccuracy),
    };
    let report = train::evaluate(&loaded, &examples(&test_set), task).unwrap();
    assert_eq!(report.confusion.total() as usize, test_set.len());
    // column sums are the gold counts of the test set
    for (j, class) in SeverityClass::ALL.iter().enumerate() {
        let gold = test_set.iter().filter(|s| s.label == *class).count() as u64;
        assert_eq!(report.confusion.column_sums()[j], gold);
    }
    assert!(report.accuracy >= 0.9, "accuracy {}", report.accuracy);
}
