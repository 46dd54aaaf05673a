use std::io::Write;
use std::path::{Path, PathBuf};

use lifelong::data::{load_idx, load_mnist};

fn repo_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

#[test]
fn bundled_mnist_subset_loads() {
    let dir = repo_data_dir();
    let ds = load_mnist(&dir, 0).expect("bundled files must parse");
    assert_eq!(ds.train.inputs.cols(), 784);
    assert_eq!(ds.test.inputs.cols(), 784);
    assert!(ds.train.len() >= 7000, "train size {}", ds.train.len());
    assert!(ds.test.len() >= 1800, "test size {}", ds.test.len());
    assert!(ds.train.labels.iter().all(|&l| l < 10));
    // pixels are /255-scaled
    let max = ds.train.inputs.data().iter().cloned().fold(0.0, f64::max);
    assert!(max <= 1.0 && max > 0.9, "max pixel {max}");
    // every class present in both splits
    for c in 0..10 {
        assert!(ds.train.labels.contains(&c));
        assert!(ds.test.labels.contains(&c));
    }
}

#[test]
fn train_subset_truncates() {
    let ds = load_mnist(&repo_data_dir(), 500).unwrap();
    assert_eq!(ds.train.len(), 500);
}

fn write_idx_pair(dir: &Path, img_magic: u32, n: u32, rows: u32, cols: u32, lab_magic: u32, lab_n: u32) -> (PathBuf, PathBuf) {
    let img_path = dir.join("imgs");
    let lab_path = dir.join("labs");
    let mut img = Vec::new();
    img.extend_from_slice(&img_magic.to_be_bytes());
    img.extend_from_slice(&n.to_be_bytes());
    img.extend_from_slice(&rows.to_be_bytes());
    img.extend_from_slice(&cols.to_be_bytes());
    img.extend(std::iter::repeat(255u8).take((n * rows * cols) as usize));
    std::fs::File::create(&img_path).unwrap().write_all(&img).unwrap();
    let mut lab = Vec::new();
    lab.extend_from_slice(&lab_magic.to_be_bytes());
    lab.extend_from_slice(&lab_n.to_be_bytes());
    lab.extend(std::iter::repeat(1u8).take(lab_n as usize));
    std::fs::File::create(&lab_path).unwrap().write_all(&lab).unwrap();
    (img_path, lab_path)
}

#[test]
fn idx_header_parses_per_published_layout() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = write_idx_pair(dir.path(), 0x0000_0803, 10, 28, 28, 0x0000_0801, 10);
    let b = load_idx(&img, &lab).unwrap();
    assert_eq!(b.len(), 10);
    assert_eq!(b.inputs.cols(), 784);
    // pixel byte 255 scales to exactly 1.0
    assert_eq!(b.inputs.get(0, 0), 1.0);
}

#[test]
fn wrong_magic_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    // label file carries the image magic
    let (img, lab) = write_idx_pair(dir.path(), 0x0000_0803, 2, 2, 2, 0x0000_0803, 2);
    let err = load_idx(&img, &lab).unwrap_err();
    assert!(err.to_string().contains("wrong magic"), "{err}");
}

#[test]
fn count_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = write_idx_pair(dir.path(), 0x0000_0803, 3, 2, 2, 0x0000_0801, 2);
    assert!(load_idx(&img, &lab).is_err());
}

#[test]
fn truncated_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let img_path = dir.path().join("imgs");
    let mut img = Vec::new();
    img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    img.extend_from_slice(&5u32.to_be_bytes());
    img.extend_from_slice(&28u32.to_be_bytes());
    img.extend_from_slice(&28u32.to_be_bytes());
    img.extend(std::iter::repeat(0u8).take(100)); // far short of 5*784
    std::fs::File::create(&img_path).unwrap().write_all(&img).unwrap();
    let (_, lab) = write_idx_pair(dir.path(), 0x0000_0803, 1, 1, 1, 0x0000_0801, 5);
    assert!(load_idx(&img_path, &lab).is_err());
}
