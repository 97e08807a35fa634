use std::path::Path;

use hecsb_core::Tensor;

use crate::error::CliError;

const IMAGES_MAGIC: u32 = 2051;
const LABELS_MAGIC: u32 = 2049;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Images as rows scaled into `[0,1]`, with class labels when the dataset
/// has them (reconstruction-only corpora ship images alone).
#[derive(Debug, Clone)]
pub struct ImageDataset {
    pub images: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl ImageDataset {
    pub fn count(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.images.shape()[1]
    }

    /// One image as a rank-1 tensor.
    pub fn image(&self, index: usize) -> Tensor {
        Tensor::new(vec![self.dim()], self.images.row(index).to_vec())
            .expect("row of a valid dataset")
    }

    /// The first `n` images (and labels), for fixed evaluation subsets.
    pub fn subset(&self, n: usize) -> Result<ImageDataset, CliError> {
        if n == 0 || n > self.count() {
            return Err(CliError::Config(format!(
                "subset of {n} image(s) from a dataset of {}",
                self.count()
            )));
        }
        let dim = self.dim();
        let images = Tensor::new(
            vec![n, dim],
            self.images.as_slice()[..n * dim].to_vec(),
        )
        .expect("prefix of a valid dataset");
        let labels = self.labels.as_ref().map(|l| l[..n].to_vec());
        Ok(ImageDataset { images, labels })
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("bounds checked"))
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Ingest(format!("{}: {e}", path.display())))
}

/// Parses an IDX3 image file: magic 2051, big-endian count/rows/cols, then
/// one byte per pixel, rescaled to `[0,1]`.
fn parse_images(path: &Path, bytes: &[u8]) -> Result<Tensor, CliError> {
    if bytes.len() < 16 {
        return Err(CliError::Ingest(format!(
            "{}: truncated header ({} bytes, need 16)",
            path.display(),
            bytes.len()
        )));
    }
    let magic = be_u32(bytes, 0);
    if magic != IMAGES_MAGIC {
        return Err(CliError::Ingest(format!(
            "{}: image magic {IMAGES_MAGIC} expected, got {magic}",
            path.display()
        )));
    }
    let count = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(CliError::Ingest(format!(
            "{}: {} bytes for {count} images of {rows}x{cols}, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    if count == 0 || rows == 0 || cols == 0 {
        return Err(CliError::Ingest(format!(
            "{}: empty dimension in header ({count} x {rows} x {cols})",
            path.display()
        )));
    }
    let data = bytes[16..].iter().map(|&b| f32::from(b) / 255.0).collect();
    Ok(Tensor::new(vec![count, rows * cols], data).expect("sized from header"))
}

/// Parses an IDX1 label file: magic 2049, big-endian count, one byte per
/// label, each a digit class 0-9.
fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>, CliError> {
    if bytes.len() < 8 {
        return Err(CliError::Ingest(format!(
            "{}: truncated header ({} bytes, need 8)",
            path.display(),
            bytes.len()
        )));
    }
    let magic = be_u32(bytes, 0);
    if magic != LABELS_MAGIC {
        return Err(CliError::Ingest(format!(
            "{}: label magic {LABELS_MAGIC} expected, got {magic}",
            path.display()
        )));
    }
    let count = be_u32(bytes, 4) as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(CliError::Ingest(format!(
            "{}: {} bytes for {count} labels, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    bytes[8..]
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            if b > 9 {
                Err(CliError::Ingest(format!(
                    "{}: label[{i}] = {b} is not a digit class",
                    path.display()
                )))
            } else {
                Ok(b as usize)
            }
        })
        .collect()
}

/// Loads an image file and, when given, its label file; counts must agree.
pub fn load_idx(images: &Path, labels: Option<&Path>) -> Result<ImageDataset, CliError> {
    let image_tensor = parse_images(images, &read_file(images)?)?;
    let labels = match labels {
        None => None,
        Some(path) => {
            let parsed = parse_labels(path, &read_file(path)?)?;
            if parsed.len() != image_tensor.shape()[0] {
                return Err(CliError::Ingest(format!(
                    "{} holds {} labels but {} holds {} images",
                    path.display(),
                    parsed.len(),
                    images.display(),
                    image_tensor.shape()[0]
                )));
            }
            Some(parsed)
        }
    };
    Ok(ImageDataset {
        images: image_tensor,
        labels,
    })
}

/// The training split under `dir`, by the published file names.
pub fn mnist_train(dir: &Path) -> Result<ImageDataset, CliError> {
    load_idx(&dir.join(TRAIN_IMAGES), Some(&dir.join(TRAIN_LABELS)))
}

/// The test split under `dir`, by the published file names.
pub fn mnist_test(dir: &Path) -> Result<ImageDataset, CliError> {
    load_idx(&dir.join(TEST_IMAGES), Some(&dir.join(TEST_LABELS)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn idx3(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        v.extend_from_slice(&count.to_be_bytes());
        v.extend_from_slice(&rows.to_be_bytes());
        v.extend_from_slice(&cols.to_be_bytes());
        v.extend_from_slice(pixels);
        v
    }

    fn idx1(count: u32, labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        v.extend_from_slice(&count.to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    fn tmp(bytes: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(bytes).unwrap();
        f
    }

    #[test]
    fn header_fields_read_big_endian_at_full_published_scale() {
        // A 10,000-image file per the published IDX layout, 1x1 pixels so
        // the fixture stays small: the loader must trust the header fields.
        let pixels = vec![128u8; 10_000];
        let f = tmp(&idx3(10_000, 1, 1, &pixels));
        let ds = load_idx(f.path(), None).unwrap();
        assert_eq!(ds.count(), 10_000);
        assert_eq!(ds.dim(), 1);
    }

    #[test]
    fn shipped_files_load_as_28_by_28() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
        let train = mnist_train(&dir).unwrap();
        let test = mnist_test(&dir).unwrap();
        assert_eq!(train.dim(), 784);
        assert_eq!(test.dim(), 784);
        assert_eq!(train.count(), 8000);
        assert_eq!(test.count(), 2000);
        assert_eq!(train.labels.as_ref().unwrap().len(), 8000);
    }

    #[test]
    fn pixels_rescale_into_unit_range() {
        let f = tmp(&idx3(2, 2, 2, &[0, 51, 255, 204, 102, 153, 10, 250]));
        let ds = load_idx(f.path(), None).unwrap();
        let all = ds.images.as_slice();
        assert!(all.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(all[0], 0.0);
        assert_eq!(all[2], 1.0);
        assert!((all[1] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn wrong_magic_names_the_file() {
        let mut bytes = idx3(1, 1, 1, &[7]);
        bytes[3] = 9; // magic becomes 2057
        let f = tmp(&bytes);
        let err = load_idx(f.path(), None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("ingest: "), "{msg}");
        assert!(msg.contains("2051") && msg.contains("2057"), "{msg}");
        assert!(msg.contains(&f.path().display().to_string()), "{msg}");
    }

    #[test]
    fn truncation_and_trailing_bytes_are_rejected() {
        let whole = idx3(3, 2, 2, &[0; 12]);
        let f = tmp(&whole[..whole.len() - 5]);
        assert!(load_idx(f.path(), None).is_err());

        let mut padded = whole.clone();
        padded.push(0);
        let f = tmp(&padded);
        assert!(load_idx(f.path(), None).is_err());

        let f = tmp(&whole[..10]);
        let msg = load_idx(f.path(), None).unwrap_err().to_string();
        assert!(msg.contains("truncated header"), "{msg}");
    }

    #[test]
    fn label_count_mismatch_and_bad_labels_are_rejected() {
        let imgs = tmp(&idx3(2, 1, 1, &[1, 2]));
        let labels = tmp(&idx1(3, &[1, 2, 3]));
        let msg = load_idx(imgs.path(), Some(labels.path()))
            .unwrap_err()
            .to_string();
        assert!(msg.contains("3 labels") && msg.contains("2 images"), "{msg}");

        let labels = tmp(&idx1(2, &[1, 10]));
        let msg = load_idx(imgs.path(), Some(labels.path()))
            .unwrap_err()
            .to_string();
        assert!(msg.contains("label[1] = 10"), "{msg}");

        let labels = tmp(&idx1(2, &[1, 2]));
        let ds = load_idx(imgs.path(), Some(labels.path())).unwrap();
        assert_eq!(ds.labels.unwrap(), vec![1, 2]);
    }

    #[test]
    fn subset_takes_a_prefix_and_validates_bounds() {
        let imgs = tmp(&idx3(4, 1, 2, &[0, 1, 2, 3, 4, 5, 6, 7]));
        let labels = tmp(&idx1(4, &[0, 1, 2, 3]));
        let ds = load_idx(imgs.path(), Some(labels.path())).unwrap();
        let sub = ds.subset(2).unwrap();
        assert_eq!(sub.count(), 2);
        assert_eq!(sub.labels.unwrap(), vec![0, 1]);
        assert!(ds.subset(5).is_err());
        assert!(ds.subset(0).is_err());
    }
}
