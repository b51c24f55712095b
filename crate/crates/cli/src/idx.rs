//! Dataset ingestion: the IDX binary container (big-endian, as distributed
//! for MNIST) and a header-free CSV fallback (`label,p0,...,p783`) for
//! synthetic fixtures. Pixels are scaled to [0, 1]; labels become one-hot
//! rows over 10 classes.

use std::fs;
use std::path::Path;

use lsqtune::datafit::Dataset;
use lsqtune::matrix::DenseMatrix;

use crate::errors::DataError;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const CLASSES: usize = 10;

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    let slice = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| DataError::TruncatedFile { path: path.to_path_buf() })?;
    Ok(u32::from_be_bytes([slice[0], slice[1], slice[2], slice[3]]))
}

/// Images as an N×(rows·cols) matrix with pixels divided by 255, flattening
/// each image in row order.
pub fn load_idx_images(path: &Path) -> Result<DenseMatrix, DataError> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
            expected: IMAGE_MAGIC,
        });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let pixels = rows * cols;
    let data = bytes
        .get(16..16 + count * pixels)
        .ok_or_else(|| DataError::TruncatedFile { path: path.to_path_buf() })?;
    let scaled: Vec<f64> = data.iter().map(|b| *b as f64 / 255.0).collect();
    Ok(DenseMatrix::new(count, pixels, scaled).expect("sizes match by construction"))
}

/// Labels as raw class bytes.
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
            expected: LABEL_MAGIC,
        });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let data = bytes
        .get(8..8 + count)
        .ok_or_else(|| DataError::TruncatedFile { path: path.to_path_buf() })?;
    Ok(data.to_vec())
}

fn one_hot_targets(labels: &[u8]) -> Result<DenseMatrix, DataError> {
    let mut targets = DenseMatrix::zeros(labels.len(), CLASSES);
    for (i, &label) in labels.iter().enumerate() {
        if label as usize >= CLASSES {
            return Err(DataError::BadLabel { value: label });
        }
        targets.set(i, label as usize, 1.0);
    }
    Ok(targets)
}

/// An image file and its label file as one classification dataset.
pub fn load_idx_pair(images: &Path, labels: &Path) -> Result<Dataset, DataError> {
    let inputs = load_idx_images(images)?;
    let raw_labels = load_idx_labels(labels)?;
    if inputs.rows() != raw_labels.len() {
        return Err(DataError::CountMismatch { images: inputs.rows(), labels: raw_labels.len() });
    }
    let targets = one_hot_targets(&raw_labels)?;
    Ok(Dataset::new(inputs, targets).expect("row counts checked above"))
}

/// Header-free CSV rows `label,p0,...,p783` with pixels in [0, 255].
pub fn load_csv(path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path)
        .map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    let mut width = None;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut fields = line.split(',');
        let label_field = fields.next().unwrap_or("");
        let label: u8 = label_field.trim().parse().map_err(|_| DataError::Csv {
            path: path.to_path_buf(),
            line: lineno,
            message: format!("bad label '{label_field}'"),
        })?;
        let mut pixels = Vec::new();
        for field in fields {
            let v: f64 = field.trim().parse().map_err(|_| DataError::Csv {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("bad pixel '{field}'"),
            })?;
            if !(0.0..=255.0).contains(&v) {
                return Err(DataError::Csv {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: format!("pixel {v} outside [0, 255]"),
                });
            }
            pixels.push(v / 255.0);
        }
        match width {
            None => width = Some(pixels.len()),
            Some(w) if w != pixels.len() => {
                return Err(DataError::Csv {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: format!("row has {} pixels, earlier rows had {w}", pixels.len()),
                });
            }
            _ => {}
        }
        labels.push(label);
        rows.push(pixels);
    }
    let width = width.ok_or_else(|| DataError::Csv {
        path: path.to_path_buf(),
        line: 0,
        message: "empty file".into(),
    })?;
    let mut inputs = DenseMatrix::zeros(rows.len(), width);
    for (i, row) in rows.iter().enumerate() {
        inputs.row_mut(i).copy_from_slice(row);
    }
    let targets = one_hot_targets(&labels)?;
    Ok(Dataset::new(inputs, targets).expect("row counts match by construction"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx_images(path: &Path, images: &[Vec<u8>], rows: u32, cols: u32) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&rows.to_be_bytes());
        bytes.extend_from_slice(&cols.to_be_bytes());
        for img in images {
            bytes.extend_from_slice(img);
        }
        fs::File::create(path).unwrap().write_all(&bytes).unwrap();
    }

    fn write_idx_labels(path: &Path, labels: &[u8]) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        bytes.extend_from_slice(labels);
        fs::File::create(path).unwrap().write_all(&bytes).unwrap();
    }

    #[test]
    fn synthetic_idx_round_trip_scales_pixels() {
        let dir = std::env::temp_dir().join("lsqtune-idx-test");
        fs::create_dir_all(&dir).unwrap();
        let img_path = dir.join("imgs");
        let lbl_path = dir.join("lbls");
        write_idx_images(&img_path, &[vec![0; 4], vec![255; 4]], 2, 2);
        write_idx_labels(&lbl_path, &[3, 9]);
        let ds = load_idx_pair(&img_path, &lbl_path).unwrap();
        assert_eq!(ds.inputs.rows(), 2);
        assert_eq!(ds.inputs.cols(), 4);
        assert!(ds.inputs.row(0).iter().all(|v| *v == 0.0));
        assert!(ds.inputs.row(1).iter().all(|v| *v == 1.0));
        assert_eq!(ds.label(0), 3);
        assert_eq!(ds.label(1), 9);
    }

    #[test]
    fn bad_magic_and_truncation_are_detected() {
        let dir = std::env::temp_dir().join("lsqtune-idx-bad");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk");
        fs::write(&path, 0x00000899_u32.to_be_bytes()).unwrap();
        assert!(matches!(load_idx_images(&path), Err(DataError::BadMagic { .. })));

        let short = dir.join("short");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&10_u32.to_be_bytes()); // promises 10 images
        bytes.extend_from_slice(&2_u32.to_be_bytes());
        bytes.extend_from_slice(&2_u32.to_be_bytes());
        bytes.extend_from_slice(&[7; 8]); // only two images worth of bytes
        fs::write(&short, bytes).unwrap();
        assert!(matches!(load_idx_images(&short), Err(DataError::TruncatedFile { .. })));
    }

    #[test]
    fn count_mismatch_is_detected() {
        let dir = std::env::temp_dir().join("lsqtune-idx-mismatch");
        fs::create_dir_all(&dir).unwrap();
        let img_path = dir.join("imgs");
        let lbl_path = dir.join("lbls");
        write_idx_images(&img_path, &[vec![0; 4]], 2, 2);
        write_idx_labels(&lbl_path, &[1, 2]);
        assert!(matches!(
            load_idx_pair(&img_path, &lbl_path),
            Err(DataError::CountMismatch { images: 1, labels: 2 })
        ));
    }

    #[test]
    fn csv_fallback_parses_and_scales() {
        let dir = std::env::temp_dir().join("lsqtune-csv-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("fixture.csv");
        fs::write(&path, "7,0,255,51\n0,255,0,102\n").unwrap();
        let ds = load_csv(&path).unwrap();
        assert_eq!(ds.inputs.rows(), 2);
        assert_eq!(ds.inputs.cols(), 3);
        assert!((ds.inputs.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((ds.inputs.get(0, 2) - 0.2).abs() < 1e-15);
        assert_eq!(ds.label(0), 7);

        fs::write(&path, "5,12\n5,1,2\n").unwrap();
        assert!(matches!(load_csv(&path), Err(DataError::Csv { line: 2, .. })));
    }
}
