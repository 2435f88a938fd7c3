use std::path::PathBuf;

use bgdlab::data::load_idx;
use bgdlab::Error;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn two_image_fixture_is_recovered_exactly() {
    let data = load_idx(
        fixture("two-images-idx3-ubyte"),
        fixture("two-labels-idx1-ubyte"),
    )
    .unwrap();
    let bytes = [0u8, 4, 11, 14, 21, 24, 41, 44, 51, 54, 61, 255];
    assert_eq!(data.len(), 2);
    assert_eq!(data.input_dim, 6);
    assert_eq!(data.labels, vec![7, 2]);
    assert_eq!(data.num_classes, 10);
    for (got, b) in data.inputs.iter().zip(bytes) {
        assert_eq!(*got, b as f64 / 255.0);
    }
    assert_eq!(data.row(1)[5], 1.0);
    assert_eq!(data.row(0)[0], 0.0);

    let padded = data.pad_images(3, 2, 4).unwrap();
    assert_eq!(padded.input_dim, 16);
    let row: Vec<f64> = padded.row(0).to_vec();
    // 3x2 image centred in 4x4: top 0, left 1
    assert_eq!(row[1], 0.0);
    assert_eq!(row[2], 4.0 / 255.0);
    assert_eq!(row[4 + 1], 11.0 / 255.0);
    assert_eq!(row[12..].iter().sum::<f64>(), 0.0);
}

#[test]
fn truncated_copy_reports_file_length() {
    let dir = tempfile::tempdir().unwrap();
    let full = std::fs::read(fixture("two-images-idx3-ubyte")).unwrap();
    let cut = dir.path().join("cut");
    std::fs::write(&cut, &full[..full.len() - 3]).unwrap();
    match load_idx(&cut, fixture("two-labels-idx1-ubyte")) {
        Err(Error::Parse { offset, .. }) => assert_eq!(offset, (full.len() - 3) as u64),
        other => panic!("{other:?}"),
    }
}

#[test]
fn swapped_files_fail_at_byte_zero() {
    match load_idx(
        fixture("two-labels-idx1-ubyte"),
        fixture("two-images-idx3-ubyte"),
    ) {
        Err(Error::Parse {
            offset: 0, path, ..
        }) => assert!(path.ends_with("two-labels-idx1-ubyte")),
        other => panic!("{other:?}"),
    }
}
