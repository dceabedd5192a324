//! Datasets: IDX image files, a synthetic Gaussian-blob generator, and a
//! stratified train/test split.
//!
//! Inputs live in `[0, 1]` with one sample per row; labels are kept both
//! as class ids and as a one-hot matrix. IDX files follow the classic
//! big-endian layout (magic 0x803 for images, 0x801 for labels) under
//! `<root>/<name>/{train,test}-{images,labels}.idx` with ten classes.

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;
use std::fs;
use std::path::{Path, PathBuf};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const IDX_CLASSES: usize = 10;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    inputs: Tensor,
    labels: Tensor,
    label_ids: Vec<usize>,
}

impl Dataset {
    /// Validates ranges and builds the one-hot label matrix.
    pub fn new(name: &str, inputs: Tensor, label_ids: Vec<usize>, classes: usize) -> Result<Dataset> {
        let (rows, _) = inputs.dims2("Dataset::new")?;
        if label_ids.len() != rows {
            return Err(Error::Parameter {
                op: "Dataset::new",
                msg: format!("{} labels for {} rows", label_ids.len(), rows),
            });
        }
        if classes < 2 {
            return Err(Error::Parameter {
                op: "Dataset::new",
                msg: "need at least two classes".to_string(),
            });
        }
        if let Some(bad) = inputs.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Parameter {
                op: "Dataset::new",
                msg: format!("input value {bad} outside [0, 1]"),
            });
        }
        let mut onehot = vec![0.0; rows * classes];
        for (r, &c) in label_ids.iter().enumerate() {
            if c >= classes {
                return Err(Error::Parameter {
                    op: "Dataset::new",
                    msg: format!("row {r}: label {c} with {classes} classes"),
                });
            }
            onehot[r * classes + c] = 1.0;
        }
        Ok(Dataset {
            name: name.to_string(),
            inputs,
            labels: Tensor::from_vec(&[rows, classes], onehot)?,
            label_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn classes(&self) -> usize {
        self.labels.cols()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn label_ids(&self) -> &[usize] {
        &self.label_ids
    }
}

fn read_u32_be(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    let slice = bytes.get(at..at + 4).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        msg: format!("file ends inside the header at byte {at}"),
    })?;
    Ok(u32::from_be_bytes([slice[0], slice[1], slice[2], slice[3]]))
}

fn load_idx_images(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = read_u32_be(&bytes, 4, path)? as usize;
    let rows = read_u32_be(&bytes, 8, path)? as usize;
    let cols = read_u32_be(&bytes, 12, path)? as usize;
    let body = &bytes[16..];
    let expected = count * rows * cols;
    if body.len() != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("{} pixel bytes for {count} x {rows} x {cols} images", body.len()),
        });
    }
    let data: Vec<f64> = body.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::from_vec(&[count, rows * cols], data)
}

fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let count = read_u32_be(&bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("{} label bytes for {count} entries", body.len()),
        });
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

fn idx_paths(root: &Path, name: &str, split: &str) -> (PathBuf, PathBuf) {
    let dir = root.join(name);
    (
        dir.join(format!("{split}-images.idx")),
        dir.join(format!("{split}-labels.idx")),
    )
}

fn load_idx_split(root: &Path, name: &str, split: &str) -> Result<Dataset> {
    let (images_path, labels_path) = idx_paths(root, name, split);
    let inputs = load_idx_images(&images_path)?;
    let label_ids = load_idx_labels(&labels_path)?;
    if label_ids.len() != inputs.rows() {
        return Err(Error::Format {
            path: labels_path,
            msg: format!("{} labels for {} images", label_ids.len(), inputs.rows()),
        });
    }
    Dataset::new(name, inputs, label_ids, IDX_CLASSES)
}

/// Loads `<root>/<name>/{train,test}-{images,labels}.idx`.
pub fn load_idx_pair(root: &Path, name: &str) -> Result<(Dataset, Dataset)> {
    Ok((
        load_idx_split(root, name, "train")?,
        load_idx_split(root, name, "test")?,
    ))
}

/// True when all four IDX files of a dataset are present.
pub fn idx_files_present(root: &Path, name: &str) -> bool {
    ["train", "test"].iter().all(|split| {
        let (i, l) = idx_paths(root, name, split);
        i.is_file() && l.is_file()
    })
}

/// Writes one split in IDX form (pixels quantized to 0..=255, image shape
/// `d x 1`). Inverse of the loader up to that quantization; values already
/// on the 1/255 grid round-trip exactly.
pub fn write_idx_split(dir: &Path, split: &str, inputs: &Tensor, label_ids: &[usize]) -> Result<()> {
    let (rows, cols) = inputs.dims2("write_idx_split")?;
    if label_ids.len() != rows {
        return Err(Error::Parameter {
            op: "write_idx_split",
            msg: format!("{} labels for {rows} rows", label_ids.len()),
        });
    }
    fs::create_dir_all(dir)?;
    let mut images = Vec::with_capacity(16 + rows * cols);
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    images.extend_from_slice(&1u32.to_be_bytes());
    for &v in inputs.data() {
        images.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    fs::write(dir.join(format!("{split}-images.idx")), images)?;

    let mut labels = Vec::with_capacity(8 + rows);
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(rows as u32).to_be_bytes());
    for &c in label_ids {
        if c > u8::MAX as usize {
            return Err(Error::Parameter {
                op: "write_idx_split",
                msg: format!("label {c} does not fit one byte"),
            });
        }
        labels.push(c as u8);
    }
    fs::write(dir.join(format!("{split}-labels.idx")), labels)?;
    Ok(())
}

/// Gaussian blobs with pairwise-equidistant class means: class `k` sits at
/// `(separation / sqrt(2)) e_k` (so any two means are `separation` apart)
/// with unit noise, then every dimension is min-max rescaled to `[0, 1]`.
/// Needs `classes <= dim`. Samples come out class-major.
pub fn synthetic_blobs(
    classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    rng: &mut RngState,
) -> Result<Dataset> {
    if classes < 2 || classes > dim {
        return Err(Error::Parameter {
            op: "synthetic_blobs",
            msg: format!("need 2 <= classes <= dim, got {classes} classes in {dim} dimensions"),
        });
    }
    if per_class == 0 {
        return Err(Error::Parameter {
            op: "synthetic_blobs",
            msg: "per_class must be at least 1".to_string(),
        });
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::Parameter {
            op: "synthetic_blobs",
            msg: format!("separation must be finite and nonnegative, got {separation}"),
        });
    }
    let rows = classes * per_class;
    let shift = separation / std::f64::consts::SQRT_2;
    let mut data = Vec::with_capacity(rows * dim);
    let mut label_ids = Vec::with_capacity(rows);
    for class in 0..classes {
        for _ in 0..per_class {
            for d in 0..dim {
                let mean = if d == class { shift } else { 0.0 };
                data.push(mean + rng.normal());
            }
            label_ids.push(class);
        }
    }
    // min-max per dimension onto [0, 1]
    for d in 0..dim {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in 0..rows {
            let v = data[r * dim + d];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let span = hi - lo;
        for r in 0..rows {
            let v = &mut data[r * dim + d];
            *v = if span > 0.0 { (*v - lo) / span } else { 0.5 };
        }
    }
    // clamp away any rounding spill just outside the unit interval
    for v in data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Dataset::new("blobs", Tensor::from_vec(&[rows, dim], data)?, label_ids, classes)
}

/// Stratified split: within each class the rows are shuffled and
/// `round(fraction * count)` of them go to the train side. Both sides keep
/// rows in ascending original order.
pub fn train_test_split(ds: &Dataset, train_fraction: f64, rng: &mut RngState) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Parameter {
            op: "train_test_split",
            msg: format!("train fraction must lie strictly between 0 and 1, got {train_fraction}"),
        });
    }
    let classes = ds.classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (r, &c) in ds.label_ids().iter().enumerate() {
        by_class[c].push(r);
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for mut members in by_class {
        rng.shuffle(&mut members);
        let take = ((members.len() as f64) * train_fraction).round() as usize;
        let take = take.min(members.len());
        train_idx.extend_from_slice(&members[..take]);
        test_idx.extend_from_slice(&members[take..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize]| -> Result<Dataset> {
        Dataset::new(
            &ds.name,
            ds.inputs().gather_rows(idx)?,
            idx.iter().map(|&r| ds.label_ids()[r]).collect(),
            classes,
        )
    };
    Ok((pick(&train_idx)?, pick(&test_idx)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_roundtrip_on_grid_values_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let name = "toy";
        // values on the 1/255 grid survive the quantization untouched
        let grid = |k: usize| (k % 256) as f64 / 255.0;
        let train_inputs = Tensor::from_vec(&[7, 5], (0..35).map(grid).collect()).unwrap();
        let train_labels: Vec<usize> = (0..7).map(|r| r % 4).collect();
        let test_inputs = Tensor::from_vec(&[3, 5], (100..115).map(grid).collect()).unwrap();
        let test_labels = vec![9, 0, 3];
        let sub = root.join(name);
        write_idx_split(&sub, "train", &train_inputs, &train_labels).unwrap();
        write_idx_split(&sub, "test", &test_inputs, &test_labels).unwrap();
        assert!(idx_files_present(root, name));

        let (train, test) = load_idx_pair(root, name).unwrap();
        assert_eq!(train.inputs(), &train_inputs);
        assert_eq!(train.label_ids(), &train_labels[..]);
        assert_eq!(test.inputs(), &test_inputs);
        assert_eq!(test.label_ids(), &test_labels[..]);
        assert_eq!(train.classes(), 10);
        // one-hot agrees with ids
        for (r, &c) in train.label_ids().iter().enumerate() {
            assert_eq!(train.labels().get(r, c), 1.0);
            assert_eq!(train.labels().row(r).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn idx_loader_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("bad");
        let inputs = Tensor::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        write_idx_split(&sub, "train", &inputs, &[1, 2]).unwrap();
        write_idx_split(&sub, "test", &inputs, &[1, 2]).unwrap();

        // truncated image body
        let img = sub.join("train-images.idx");
        let bytes = fs::read(&img).unwrap();
        fs::write(&img, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(
            load_idx_pair(dir.path(), "bad"),
            Err(Error::Format { .. })
        ));

        // wrong magic
        let mut bytes = bytes;
        bytes[3] = 0x99;
        fs::write(&img, &bytes).unwrap();
        let err = load_idx_pair(dir.path(), "bad").unwrap_err();
        assert!(err.to_string().contains("magic"));

        // image/label count mismatch
        fs::write(&img, {
            let mut fixed = fs::read(sub.join("test-images.idx")).unwrap();
            fixed[7] = 1; // claim one image, then provide matching byte count
            fixed.truncate(16 + 3);
            fixed
        })
        .unwrap();
        assert!(matches!(
            load_idx_pair(dir.path(), "bad"),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn missing_files_are_detected_not_loaded() {
        let dir = tempfile::tempdir().unwrap();
        assert!(!idx_files_present(dir.path(), "nothing"));
        assert!(load_idx_pair(dir.path(), "nothing").is_err());
    }

    #[test]
    fn blobs_are_in_range_balanced_and_separable() {
        let mut rng = RngState::new(6);
        let ds = synthetic_blobs(4, 9, 50, 10.0, &mut rng).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.dim(), 9);
        assert_eq!(ds.classes(), 4);
        assert!(ds.inputs().data().iter().all(|v| (0.0..=1.0).contains(v)));
        for c in 0..4 {
            assert_eq!(ds.label_ids().iter().filter(|&&l| l == c).count(), 50);
        }
        // nearest-class-mean classification separates a 10-sigma layout
        let mut means = vec![vec![0.0; 9]; 4];
        for r in 0..200 {
            let c = ds.label_ids()[r];
            for (d, &v) in ds.inputs().row(r).iter().enumerate() {
                means[c][d] += v / 50.0;
            }
        }
        let mut correct = 0;
        for r in 0..200 {
            let row = ds.inputs().row(r);
            let mut best = (f64::INFINITY, 0);
            for (c, mean) in means.iter().enumerate() {
                let d2: f64 = row.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < best.0 {
                    best = (d2, c);
                }
            }
            if best.1 == ds.label_ids()[r] {
                correct += 1;
            }
        }
        assert_eq!(correct, 200);
    }

    #[test]
    fn blobs_reject_more_classes_than_dimensions() {
        let mut rng = RngState::new(1);
        assert!(synthetic_blobs(5, 4, 10, 6.0, &mut rng).is_err());
        assert!(synthetic_blobs(1, 4, 10, 6.0, &mut rng).is_err());
        assert!(synthetic_blobs(3, 4, 0, 6.0, &mut rng).is_err());
    }

    #[test]
    fn split_is_stratified_disjoint_and_complete() {
        let mut rng = RngState::new(9);
        let ds = synthetic_blobs(4, 6, 60, 8.0, &mut rng).unwrap();
        let (train, test) = train_test_split(&ds, 5.0 / 6.0, &mut rng).unwrap();
        assert_eq!(train.len(), 200);
        assert_eq!(test.len(), 40);
        for c in 0..4 {
            assert_eq!(train.label_ids().iter().filter(|&&l| l == c).count(), 50);
            assert_eq!(test.label_ids().iter().filter(|&&l| l == c).count(), 10);
        }
        // every original row appears exactly once across the two sides
        let count_rows = |d: &Dataset| -> Vec<Vec<f64>> {
            (0..d.len()).map(|r| d.inputs().row(r).to_vec()).collect()
        };
        let mut all = count_rows(&train);
        all.extend(count_rows(&test));
        let mut originals: Vec<Vec<f64>> = (0..ds.len()).map(|r| ds.inputs().row(r).to_vec()).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        originals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(all, originals);

        assert!(train_test_split(&ds, 0.0, &mut rng).is_err());
        assert!(train_test_split(&ds, 1.0, &mut rng).is_err());
    }
}
