//! Data sets and on-disk formats.
//!
//! Row convention throughout the crate: a data set is an `Array2<f64>`
//! with one example per row. Pixel data loads as `byte / 255` so every
//! matrix lives in `[0, 1]^D`.
//!
//! Formats:
//!
//! * image batches: raw records of one label byte followed by 3072
//!   pixel bytes, the common binary layout for 32x32 RGB benchmark
//!   sets;
//! * matrices: a small magic-tagged binary format with little-endian
//!   f64 payload, plus an optional JSON sidecar carrying provenance;
//! * traces: plain numeric CSV via [`write_csv`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read as _, Write as _};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};

/// Pixels per record in the image batch format.
pub const IMAGE_DIMS: usize = 3072;
const RECORD_BYTES: usize = IMAGE_DIMS + 1;

/// Summary statistics over pairwise Euclidean distances of a data set,
/// computed on a seeded uniform subsample of at most `subsample` rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceStats {
    pub max: f64,
    pub median: f64,
    pub mean: f64,
}

/// Pairwise distance statistics; the maximum is the recommended largest
/// noise scale for a schedule built on this data.
pub fn distance_stats(
    data: ArrayView2<'_, f64>,
    subsample: usize,
    seed: u64,
) -> Result<DistanceStats> {
    let s = dist::pair_stats(data, subsample, seed)?;
    Ok(DistanceStats {
        max: s.max,
        median: s.median,
        mean: s.mean,
    })
}

/// `n` draws from an isotropic Gaussian mixture: component `k` is
/// centered at row `k` of `centers` with common scale `sigma`, chosen
/// with probability proportional to `weights[k]`. A single ChaCha
/// stream drives both the component choice and the offsets, so a seed
/// pins the entire sample.
pub fn sample_gaussian_mixture(
    centers: ArrayView2<'_, f64>,
    weights: &[f64],
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    if centers.nrows() == 0 || centers.ncols() == 0 {
        return Err(Error::invalid("mixture needs at least one center"));
    }
    if weights.len() != centers.nrows() {
        return Err(Error::invalid("one weight per center"));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("weights must not all be zero"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(
            "component scale must be finite and nonnegative",
        ));
    }
    if n == 0 {
        return Err(Error::invalid("sample count must be at least one"));
    }
    let d = centers.ncols();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in weights {
        acc += w / total;
        cumulative.push(acc);
    }
    *cumulative.last_mut().expect("weights are nonempty") = 1.0;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, d));
    for mut row in out.rows_mut() {
        let u: f64 = rand::Rng::random(&mut rng);
        let k = cumulative
            .partition_point(|&c| c < u)
            .min(weights.len() - 1);
        let center = centers.row(k);
        for (x, &c) in row.iter_mut().zip(center.iter()) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = c + sigma * z;
        }
    }
    Ok(out)
}

/// `n` draws from a single isotropic Gaussian.
pub fn sample_gaussian(
    center: ArrayView1<'_, f64>,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let c = center
        .to_owned()
        .into_shape_with_order((1, center.len()))
        .expect("row reshape");
    sample_gaussian_mixture(c.view(), &[1.0], sigma, n, seed)
}

/// Load the five training batches `data_batch_1.bin` ..
/// `data_batch_5.bin` from `dir` into one matrix, pixels scaled to
/// `[0, 1]`.
pub fn load_cifar10(dir: &Path) -> Result<Array2<f64>> {
    let paths: Vec<PathBuf> = (1..=5)
        .map(|i| dir.join(format!("data_batch_{i}.bin")))
        .collect();
    load_image_batches(&paths)
}

/// Load `test_batch.bin` from `dir`, pixels scaled to `[0, 1]`.
pub fn load_cifar10_test(dir: &Path) -> Result<Array2<f64>> {
    load_image_batches(&[dir.join("test_batch.bin")])
}

/// Load and concatenate label+pixel record files.
pub fn load_image_batches(paths: &[PathBuf]) -> Result<Array2<f64>> {
    let mut rows = Vec::new();
    let mut total = 0usize;
    for path in paths {
        let bytes = std::fs::read(path).map_err(|e| Error::format(path.clone(), e.to_string()))?;
        if bytes.is_empty() || bytes.len() % RECORD_BYTES != 0 {
            return Err(Error::format(
                path.clone(),
                format!(
                    "batch length {} is not a positive multiple of {RECORD_BYTES}",
                    bytes.len()
                ),
            ));
        }
        let n = bytes.len() / RECORD_BYTES;
        rows.reserve(n * IMAGE_DIMS);
        for rec in bytes.chunks_exact(RECORD_BYTES) {
            rows.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
        }
        total += n;
    }
    Array2::from_shape_vec((total, IMAGE_DIMS), rows).map_err(|e| Error::invalid(e.to_string()))
}

/// Write a label+pixel record file (labels all zero). Pixel values are
/// clamped to `[0, 1]` and quantized to bytes; a matrix produced by
/// [`load_image_batches`] writes back bit-identically.
pub fn write_image_batch(path: &Path, images: ArrayView2<'_, f64>) -> Result<()> {
    if images.ncols() != IMAGE_DIMS {
        return Err(Error::invalid(format!(
            "image rows must have {IMAGE_DIMS} columns, got {}",
            images.ncols()
        )));
    }
    let file = File::create(path).map_err(|e| Error::format(path.to_owned(), e.to_string()))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(RECORD_BYTES);
    for row in images.rows() {
        buf.clear();
        buf.push(0u8);
        buf.extend(
            row.iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        w.write_all(&buf)
            .map_err(|e| Error::format(path.to_owned(), e.to_string()))?;
    }
    w.flush()
        .map_err(|e| Error::format(path.to_owned(), e.to_string()))
}

const MATRIX_MAGIC: &[u8; 4] = b"SKMX";

/// Write a matrix in the crate's binary format: magic, version, shape,
/// then row-major little-endian f64 payload.
pub fn write_matrix(path: &Path, m: ArrayView2<'_, f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::format(path.to_owned(), e.to_string()))?;
    let mut w = BufWriter::new(file);
    let go = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(MATRIX_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(m.nrows() as u64).to_le_bytes())?;
        w.write_all(&(m.ncols() as u64).to_le_bytes())?;
        for row in m.rows() {
            for &v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    };
    go(&mut w).map_err(|e| Error::format(path.to_owned(), e.to_string()))
}

/// Read a matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let file = File::open(path).map_err(|e| Error::format(path.to_owned(), e.to_string()))?;
    let mut r = BufReader::new(file);
    let bad = |reason: &str| Error::format(path.to_owned(), reason.to_string());

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| bad(&e.to_string()))?;
    if &magic != MATRIX_MAGIC {
        return Err(bad("not a matrix file (bad magic)"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|e| bad(&e.to_string()))?;
    if u32::from_le_bytes(u32buf) != 1 {
        return Err(bad("unsupported matrix format version"));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(|e| bad(&e.to_string()))?;
    let rows = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf).map_err(|e| bad(&e.to_string()))?;
    let cols = u64::from_le_bytes(u64buf) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| bad("matrix shape overflows"))?;

    let mut payload = vec![0u8; count * 8];
    r.read_exact(&mut payload)
        .map_err(|e| bad(&e.to_string()))?;
    let mut tail = [0u8; 1];
    if r.read(&mut tail).map_err(|e| bad(&e.to_string()))? != 0 {
        return Err(bad("trailing bytes after matrix payload"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(&e.to_string()))
}

/// Provenance sidecar written next to sample matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub version: u32,
    pub rows: usize,
    pub dims: usize,
    pub seed: u64,
    pub schedule_id: String,
}

fn sidecar_path(matrix_path: &Path) -> PathBuf {
    matrix_path.with_extension("json")
}

/// Write the JSON sidecar for the matrix at `matrix_path`.
pub fn write_sample_meta(matrix_path: &Path, meta: &SampleMeta) -> Result<()> {
    let path = sidecar_path(matrix_path);
    let text = serde_json::to_string_pretty(meta).expect("sidecar serializes");
    std::fs::write(&path, text).map_err(|e| Error::format(path.clone(), e.to_string()))
}

/// Read the JSON sidecar for the matrix at `matrix_path`.
pub fn read_sample_meta(matrix_path: &Path) -> Result<SampleMeta> {
    let path = sidecar_path(matrix_path);
    let text =
        std::fs::read_to_string(&path).map_err(|e| Error::format(path.clone(), e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path.clone(), e.to_string()))
}

/// Write a numeric CSV: a header row, then one line per data row with
/// values in shortest round-trip decimal form.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let file = File::create(path).map_err(|e| Error::format(path.to_owned(), e.to_string()))?;
    let mut w = BufWriter::new(file);
    let go = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            let mut first = true;
            for v in row {
                if !first {
                    write!(w, ",")?;
                }
                write!(w, "{v}")?;
                first = false;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    go(&mut w).map_err(|e| Error::format(path.to_owned(), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use tempfile::tempdir;

    #[test]
    fn mixture_is_seed_deterministic_and_centered() {
        let centers = array![[0.25, 0.5], [0.75, 0.5]];
        let a = sample_gaussian_mixture(centers.view(), &[1.0, 1.0], 0.05, 4000, 9).unwrap();
        let b = sample_gaussian_mixture(centers.view(), &[1.0, 1.0], 0.05, 4000, 9).unwrap();
        assert_eq!(a, b);
        let mean_x = a.column(0).mean().unwrap();
        let mean_y = a.column(1).mean().unwrap();
        // Component means average to (0.5, 0.5); the component split
        // and the 0.05 noise keep the sample mean within a few
        // standard errors of that.
        assert!((mean_x - 0.5).abs() < 0.02, "mean_x = {mean_x}");
        assert!((mean_y - 0.5).abs() < 0.01, "mean_y = {mean_y}");
        // Both modes are populated roughly evenly.
        let left = a.column(0).iter().filter(|&&x| x < 0.5).count();
        let frac = left as f64 / a.nrows() as f64;
        assert!((frac - 0.5).abs() < 0.05, "left fraction = {frac}");
    }

    #[test]
    fn mixture_respects_weights() {
        let centers = array![[0.0], [10.0]];
        let s = sample_gaussian_mixture(centers.view(), &[3.0, 1.0], 0.1, 2000, 4).unwrap();
        let near_zero = s.column(0).iter().filter(|&&x| x < 5.0).count();
        let frac = near_zero as f64 / 2000.0;
        assert!((frac - 0.75).abs() < 0.05, "frac = {frac}");
    }

    #[test]
    fn mixture_rejects_bad_inputs() {
        let centers = array![[0.0, 0.0]];
        assert!(sample_gaussian_mixture(centers.view(), &[1.0, 2.0], 0.1, 5, 0).is_err());
        assert!(sample_gaussian_mixture(centers.view(), &[0.0], 0.1, 5, 0).is_err());
        assert!(sample_gaussian_mixture(centers.view(), &[-1.0], 0.1, 5, 0).is_err());
        assert!(sample_gaussian_mixture(centers.view(), &[1.0], -0.1, 5, 0).is_err());
        assert!(sample_gaussian_mixture(centers.view(), &[1.0], 0.1, 0, 0).is_err());
    }

    #[test]
    fn single_gaussian_matches_moments() {
        let s = sample_gaussian(array![1.0, -2.0].view(), 0.5, 8000, 3).unwrap();
        assert!((s.column(0).mean().unwrap() - 1.0).abs() < 0.02);
        assert!((s.column(1).mean().unwrap() + 2.0).abs() < 0.02);
        let var = s.column(0).mapv(|x| (x - 1.0) * (x - 1.0)).mean().unwrap();
        assert!((var - 0.25).abs() < 0.01, "var = {var}");
    }

    #[test]
    fn image_batch_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("test_batch.bin");
        // Values exactly representable as byte / 255.
        let images = Array2::from_shape_fn((3, IMAGE_DIMS), |(i, j)| {
            ((i * 31 + j) % 256) as f64 / 255.0
        });
        write_image_batch(&path, images.view()).unwrap();
        let loaded = load_cifar10_test(dir.path()).unwrap();
        assert_eq!(loaded, images);
        // Writing the loaded matrix reproduces the file byte for byte.
        let path2 = dir.path().join("again.bin");
        write_image_batch(&path2, loaded.view()).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn image_batch_rejects_truncation_and_absence() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("test_batch.bin");
        std::fs::write(&path, vec![0u8; RECORD_BYTES + 7]).unwrap();
        assert!(load_cifar10_test(dir.path()).is_err());
        assert!(load_cifar10(dir.path()).is_err());
    }

    #[test]
    fn matrix_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = array![[1.5, -0.0, 1e-300], [f64::MIN_POSITIVE, 255.0, -3.25]];
        write_matrix(&path, m.view()).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(m.shape(), back.shape());
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn matrix_reader_rejects_corruption() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = array![[1.0, 2.0]];
        write_matrix(&path, m.view()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_matrix(&path).is_err());

        write_matrix(&path, m.view()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_matrix(&path).is_err());

        write_matrix(&path, m.view()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_matrix(&path).is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("samples.bin");
        let meta = SampleMeta {
            version: 1,
            rows: 64,
            dims: 2,
            seed: 7,
            schedule_id: "00ff00ff00ff00ff".into(),
        };
        write_sample_meta(&path, &meta).unwrap();
        assert_eq!(read_sample_meta(&path).unwrap(), meta);
        assert!(dir.path().join("samples.json").exists());
    }

    #[test]
    fn csv_golden_output() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(
            &path,
            &["sigma", "value"],
            vec![vec![0.5, 1.0], vec![0.25, -2.5]],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "sigma,value\n0.5,1\n0.25,-2.5\n");
    }

    #[test]
    fn distance_stats_delegate() {
        let pts = array![[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]];
        let s = distance_stats(pts.view(), 10, 0).unwrap();
        assert_eq!(s.max, 5.0);
        assert_eq!(s.median, 4.0);
    }
}
