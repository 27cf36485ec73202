//! Manifest handling on a stand-in for the AucoDefr07 layout: 16 recordings
//! in four classes with the published recording and location counts. The
//! audio is written at 10 Hz so that quarter-hour recordings stay tiny.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bof_core::audio_io::write_wav_i16;
use bof_core::dataset::{leakage_summary, load_manifest, materialize};
use bof_core::{DatasetManifest, Error, SampleBuffer, UnitPolicy};

const RATE: u32 = 10;

/// (class, location per recording, minutes per recording)
const LAYOUT: [(&str, &[&str], &[f64]); 4] = [
    (
        "avenue",
        &["av1", "av1", "av2", "av2", "av3"],
        &[12.0, 12.4, 12.0, 13.0, 12.0],
    ),
    ("street", &["st1", "st1", "st2"], &[18.0, 18.0, 21.2]),
    (
        "market",
        &["mk1", "mk1", "mk1", "mk2", "mk2"],
        &[12.0, 12.0, 12.0, 12.0, 12.0],
    ),
    ("park", &["pk1", "pk1", "pk1"], &[18.0, 18.0, 21.0]),
];

fn stand_in(dir: &Path) -> PathBuf {
    let mut csv =
        String::from("item_id,audio_path,class_label,recording_id,location_id,segment_index\n");
    for (class, locations, minutes) in LAYOUT {
        for (r, (loc, min)) in locations.iter().zip(minutes).enumerate() {
            let rec = format!("{class}{r:02}");
            let n = (min * 60.0 * f64::from(RATE)) as usize;
            let samples = (0..n)
                .map(|i| ((i * 37 + r) % 101) as f64 / 101.0 - 0.5)
                .collect();
            let buf = SampleBuffer::new(samples, RATE, &rec).unwrap();
            write_wav_i16(dir.join(format!("{rec}.wav")), &buf).unwrap();
            writeln!(csv, "{rec},{rec}.wav,{class},{rec},{loc},").unwrap();
        }
    }
    let path = dir.join("aucodefr07.csv");
    std::fs::write(&path, csv).unwrap();
    path
}

fn segmented() -> UnitPolicy {
    UnitPolicy::Segmented {
        unit_seconds: 180.0,
    }
}

fn count(m: &DatasetManifest, class: &str) -> usize {
    m.items.iter().filter(|e| e.class_label == class).count()
}

#[test]
fn whole_recordings_give_sixteen_items() {
    let dir = tempfile::tempdir().unwrap();
    let m = load_manifest(stand_in(dir.path()), UnitPolicy::WholeRecording).unwrap();
    assert_eq!(m.len(), 16);
    let s = leakage_summary(&m);
    assert_eq!(s.classes.len(), 4);
    let park = s.classes.iter().find(|c| c.class_label == "park").unwrap();
    assert_eq!((park.recordings, park.locations), (3, 1));
    assert!(s.classes.iter().all(|c| c.leakage_fraction == 0.0));
    assert!((s.mean_locations_per_class - 2.0).abs() < 1e-12);
}

#[test]
fn three_minute_units_give_seventy_eight_items() {
    let dir = tempfile::tempdir().unwrap();
    let m = load_manifest(stand_in(dir.path()), segmented()).unwrap();
    assert_eq!(m.len(), 78);
    for class in ["avenue", "street", "market", "park"] {
        let n = count(&m, class);
        assert!((19..=21).contains(&n), "{class}: {n}");
    }
    assert!(m
        .items
        .iter()
        .all(|e| e.derived && e.segment_index.is_some()));
    let mut ids = m.ids();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 78);
}

#[test]
fn leakage_matches_pair_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let m = load_manifest(stand_in(dir.path()), segmented()).unwrap();
    let s = leakage_summary(&m);
    for c in &s.classes {
        let items: Vec<_> = m
            .items
            .iter()
            .filter(|e| e.class_label == c.class_label)
            .collect();
        let (mut same, mut shared) = (0, 0);
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                same += 1;
                if items[i].recording_id == items[j].recording_id {
                    shared += 1;
                }
            }
        }
        assert_eq!(
            (c.same_class_pairs, c.shared_recording_pairs),
            (same, shared)
        );
        assert_eq!(c.leakage_fraction, shared as f64 / same as f64);
        // Five evenly split recordings share 30 of 190 pairs; three share 51 or more of 171.
        let floor = if c.recordings == 5 { 0.15 } else { 0.2 };
        assert!(
            c.leakage_fraction > floor,
            "{}: {}",
            c.class_label,
            c.leakage_fraction
        );
    }
    assert!(s.classes.iter().any(|c| c.leakage_fraction > 0.2));
}

#[test]
fn materialized_units_have_unit_length() {
    let dir = tempfile::tempdir().unwrap();
    let m = load_manifest(stand_in(dir.path()), segmented()).unwrap();
    let audio = materialize(&m, false).unwrap();
    assert_eq!(audio.len(), 78);
    for ((id, buf), entry) in audio.iter().zip(&m.items) {
        assert_eq!(id, &entry.item_id);
        assert_eq!(buf.len(), 1800);
    }
}

#[test]
fn precut_rows_are_rejected_for_whole_policy() {
    let dir = tempfile::tempdir().unwrap();
    let buf = SampleBuffer::new(vec![0.1; 100], RATE, "x").unwrap();
    write_wav_i16(dir.path().join("x.wav"), &buf).unwrap();
    let path = dir.path().join("m.csv");
    std::fs::write(
        &path,
        "item_id,audio_path,class_label,recording_id,location_id,segment_index\n\
         a,x.wav,c,r,l,0\nb,x.wav,c,r,l,1\nc,x.wav,d,s,l,0\nd,x.wav,d,s,l,1\n",
    )
    .unwrap();
    assert!(matches!(
        load_manifest(&path, UnitPolicy::WholeRecording),
        Err(Error::Manifest { .. })
    ));
    let m = load_manifest(&path, segmented()).unwrap();
    assert_eq!(m.len(), 4);
    assert!(m.items.iter().all(|e| !e.derived));
}

fn shipped(name: &str) -> Vec<csv::StringRecord> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../manifests")
        .join(name);
    let mut reader = csv::Reader::from_path(path).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        bof_core::dataset::COLUMNS
    );
    reader.records().map(Result::unwrap).collect()
}

#[test]
fn shipped_manifests_follow_published_morphology() {
    use std::collections::{BTreeMap, BTreeSet};
    let rows = shipped("aucodefr07.csv");
    let mut per_class: BTreeMap<&str, (BTreeSet<&str>, BTreeSet<&str>)> = BTreeMap::new();
    for r in &rows {
        let e = per_class.entry(&r[2]).or_default();
        e.0.insert(&r[3]);
        e.1.insert(&r[4]);
    }
    let shape: Vec<(&str, usize, usize)> = per_class
        .iter()
        .map(|(c, (r, l))| (*c, r.len(), l.len()))
        .collect();
    assert_eq!(
        shape,
        [
            ("avenue", 5, 3),
            ("market", 5, 2),
            ("park", 3, 1),
            ("street", 3, 2)
        ]
    );

    let qmul = shipped("qmul.csv");
    assert_eq!(qmul.len(), 100);
    let classes: BTreeSet<&str> = qmul.iter().map(|r| &r[2]).collect();
    assert_eq!(classes.len(), 10);
}
