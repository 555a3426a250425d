use std::path::Path;

use bimlta_cli::{load_covariates, load_incidence, parse_incidence, save_incidence, CliError};
use ndarray::array;

fn parse(text: &str) -> Result<bimlta::IncidenceMatrix, CliError> {
    parse_incidence(text.as_bytes(), Path::new("y.csv"))
}

#[test]
fn two_by_two_example() {
    let y = parse("id,c1,c2\na,1,0\nb,0,1").unwrap();
    assert_eq!(y.data(), &array![[1u8, 0], [0, 1]]);
    assert_eq!(y.sending_labels(), ["a", "b"]);
    assert_eq!(y.receiving_labels(), ["c1", "c2"]);
}

#[test]
fn non_binary_cell_is_located() {
    let err = parse("id,c1,c2\na,1,0\nb,0,2").unwrap_err();
    match &err {
        CliError::Cell { line, column, .. } => {
            assert_eq!(*line, 3);
            assert_eq!(column, "c2");
        }
        other => panic!("unexpected error {other:?}"),
    }
    assert!(err.to_string().contains("'2'"));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn ragged_rows_are_rejected() {
    let err = parse("id,c1,c2\na,1,0\nb,0").unwrap_err();
    assert!(matches!(err, CliError::Format { .. }));
    assert!(err.to_string().contains("line 3"));
}

#[test]
fn save_then_load_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("y.csv");
    let y = parse("node,p,q,r\nx,1,0,1\ny,0,0,0\nz,1,1,1").unwrap();
    save_incidence(&y, &path).unwrap();
    assert_eq!(load_incidence(&path).unwrap(), y);
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_incidence(Path::new("/nonexistent/y.csv")).unwrap_err();
    assert!(matches!(err, CliError::Io { .. }));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn covariates_follow_incidence_rows_and_gain_an_intercept() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    std::fs::write(&path, "id,age,wbc\nb,30,7.5\na,41,12\n").unwrap();
    let x = load_covariates(&path, &["a".into(), "b".into()]).unwrap();
    assert_eq!(x.data(), &array![[1.0, 41.0, 12.0], [1.0, 30.0, 7.5]]);
    assert_eq!(x.names()[1..], ["age", "wbc"]);

    std::fs::write(&path, "id,age\na,41\nb,old\n").unwrap();
    let err = load_covariates(&path, &["a".into(), "b".into()]).unwrap_err();
    assert!(matches!(err, CliError::Cell { line: 3, .. }), "{err:?}");
}
