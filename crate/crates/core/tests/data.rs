use std::io::BufReader;

use flexgcn::data::{load, parse_jsonl, save, synthesize, write_jsonl, SynthConfig};
use flexgcn::graph::SkeletonGraph;
use flexgcn::Error;

const FIXTURE: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/fixtures/conformance.jsonl"
);

fn bone_length(m: &flexgcn::numerics::Matrix, a: usize, b: usize) -> f64 {
    (0..3)
        .map(|k| (m.get(a, k) - m.get(b, k)).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn hundred_samples_round_trip_exactly() {
    let g = SkeletonGraph::h36m();
    let cfg = SynthConfig {
        noise_px: 2.0,
        ..SynthConfig::h36m(100, 42)
    };
    let data = synthesize(&cfg, &g).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    save(&data, &path).unwrap();
    let back = load(&path).unwrap();
    assert_eq!(back, data);
    assert_eq!(back.len(), 100);
}

#[test]
fn generated_bones_match_config() {
    let g = SkeletonGraph::h36m();
    let cfg = SynthConfig::h36m(64, 5);
    for s in &synthesize(&cfg, &g).unwrap().samples {
        assert_eq!(s.n_joints(), 17);
        assert!(s.joints_2d.is_finite() && s.joints_3d.is_finite());
        for (e, &(a, b)) in g.edges().iter().enumerate() {
            assert!((bone_length(&s.joints_3d, a, b) - cfg.bone_lengths_mm[e]).abs() < 1e-6);
        }
    }
}

#[test]
fn conformance_fixture_parses_and_reserializes_byte_for_byte() {
    let text = std::fs::read_to_string(FIXTURE).unwrap();
    let data = parse_jsonl(BufReader::new(text.as_bytes())).unwrap();
    assert_eq!(data.len(), 3);
    let g = SkeletonGraph::h36m();
    let lengths = SynthConfig::h36m(1, 0).bone_lengths_mm;
    for s in &data.samples {
        assert_eq!(s.n_joints(), 17);
        assert_eq!(s.joints_3d.row(0), &[0.0, 0.0, 0.0]);
        assert!(s.action.is_some());
        for (e, &(a, b)) in g.edges().iter().enumerate() {
            assert!((bone_length(&s.joints_3d, a, b) - lengths[e]).abs() < 1e-6);
        }
    }
    let mut out = Vec::new();
    write_jsonl(&data, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), text);
}

#[test]
fn synthesis_reproduces_fixture() {
    let text = std::fs::read_to_string(FIXTURE).unwrap();
    let data = synthesize(&SynthConfig::h36m(3, 0), &SkeletonGraph::h36m()).unwrap();
    let mut out = Vec::new();
    write_jsonl(&data, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), text);
}

#[test]
fn malformed_files_are_rejected_with_line_numbers() {
    let text = std::fs::read_to_string(FIXTURE).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = r#"{"j2d": [[0.0, 0.0]], "cam": {"f": 1.0, "c": [0.0, 0.0]}}"#;
    let broken = lines.join("\n");
    match parse_jsonl(broken.as_bytes()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load(dir.path().join("missing.jsonl")),
        Err(Error::Io { .. })
    ));
}
