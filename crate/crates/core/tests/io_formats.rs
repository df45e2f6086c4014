//! On-disk formats through the public API.

use std::fs;

use becimp::io::{self, Matrix, MatrixFormats};
use becimp::Error;
use proptest::prelude::*;

#[test]
fn binary_layout_is_little_endian_with_64_byte_header() {
    let dir = tempfile::tempdir().unwrap();
    let m = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.25]], 0.125, 0.05).unwrap();
    let files = io::write_matrix(
        dir.path(),
        "density_bec",
        &m,
        MatrixFormats {
            text: true,
            binary: true,
        },
    )
    .unwrap();
    assert_eq!(files.len(), 2);
    let bytes = fs::read(dir.path().join("density_bec.bin")).unwrap();
    assert_eq!(bytes.len(), io::HEADER_LEN + 4 * 8);
    assert_eq!(&bytes[..8], io::MAGIC);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
    assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
    assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 0.125);
    assert_eq!(f64::from_le_bytes(bytes[32..40].try_into().unwrap()), 0.05);
    assert_eq!(f64::from_le_bytes(bytes[64 + 8..64 + 16].try_into().unwrap()), -2.0);
    assert_eq!(
        io::read_text_matrix(&dir.path().join("density_bec.csv")).unwrap(),
        vec![vec![1.0, -2.0], vec![0.5, 3.25]]
    );
}

#[test]
fn truncated_and_missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.bin");
    io::write_binary_matrix(&p, &Matrix::from_rows(&[vec![1.0; 4]], 0.1, 0.1).unwrap()).unwrap();
    let mut bytes = fs::read(&p).unwrap();
    bytes.pop();
    fs::write(&p, &bytes).unwrap();
    assert!(matches!(io::read_binary_matrix(&p), Err(Error::Format { .. })));
    assert!(matches!(
        io::read_binary_matrix(&dir.path().join("absent.bin")),
        Err(Error::MissingInput(_))
    ));
}

#[test]
fn tampered_output_fails_manifest_check() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("widths.csv");
    io::write_csv(&p, &["t", "w"], &[&[0.0, 0.1], &[1.0, 1.1]]).unwrap();
    let info = io::ManifestInfo {
        config: Default::default(),
        wall_time_s: 0.0,
        n_points: 8,
        half_width: 1.0,
        steps: 0,
        convergence: Default::default(),
        status: io::RunStatus::Ok,
        notes: Vec::new(),
    };
    io::write_manifest(dir.path(), &info, std::slice::from_ref(&p)).unwrap();
    io::verify_manifest(dir.path()).unwrap();
    fs::write(&p, "t,w\n0,1\n0.1,1.2\n").unwrap();
    assert!(io::verify_manifest(dir.path()).is_err());
}

proptest! {
    #[test]
    fn csv_columns_round_trip(rows in prop::collection::vec((-1e6f64..1e6, -1e-6f64..1e-6), 1..40)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let (a, b): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
        io::write_csv(&p, &["a", "b"], &[&a, &b]).unwrap();
        let (header, cols) = io::read_csv(&p).unwrap();
        prop_assert_eq!(header, vec!["a".to_string(), "b".to_string()]);
        prop_assert_eq!(&cols[0], &a);
        prop_assert_eq!(&cols[1], &b);
    }
}
