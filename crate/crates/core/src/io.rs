//! On-disk formats: snapshot matrices, CSV tables and the run manifest.
//!
//! Binary matrices start with a 64-byte header
//!
//! | offset | size | content                      |
//! |--------|------|------------------------------|
//! | 0      | 8    | magic `BECIMP01`             |
//! | 8      | 8    | rows, u64 little-endian      |
//! | 16     | 8    | cols, u64 little-endian      |
//! | 24     | 8    | dz, f64 little-endian        |
//! | 32     | 8    | dt_snapshot, f64 little-endian |
//! | 40     | 24   | zero                         |
//!
//! followed by `rows * cols` little-endian f64 values in row-major order.
//! Text matrices hold one comma-separated row per snapshot, values printed
//! in shortest round-trip form.
//!
//! Files are written to a `.partial` sibling and renamed into place, so an
//! interrupted write never leaves a truncated file under the final name.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::solver::{SnapshotSeries, Species};

pub const MAGIC: &[u8; 8] = b"BECIMP01";
pub const HEADER_LEN: usize = 64;
pub const MANIFEST_NAME: &str = "manifest.json";

/// Dense row-major matrix with its grid metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub dz: f64,
    pub dt_snapshot: f64,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn from_rows(rows: &[Vec<f64>], dz: f64, dt_snapshot: f64) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 {
            return Err(Error::InvalidParameter("matrix must be non-empty".into()));
        }
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidParameter("ragged matrix rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            dz,
            dt_snapshot,
            data: rows.concat(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

/// Writes through `body` into a temporary file and renames it into place;
/// the temporary is removed on failure.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let tmp = partial_path(path);
    let result = (|| {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        body(&mut w)?;
        w.flush()?;
        drop(w);
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::Io(e));
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}

pub fn write_binary_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_atomic(path, |w| {
        let mut header = [0u8; HEADER_LEN];
        header[..8].copy_from_slice(MAGIC);
        header[8..16].copy_from_slice(&(m.rows as u64).to_le_bytes());
        header[16..24].copy_from_slice(&(m.cols as u64).to_le_bytes());
        header[24..32].copy_from_slice(&m.dz.to_le_bytes());
        header[32..40].copy_from_slice(&m.dt_snapshot.to_le_bytes());
        w.write_all(&header)?;
        for v in &m.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    })
}

fn format_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

pub fn read_binary_matrix(path: &Path) -> Result<Matrix> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(format_error(path, "missing BECIMP01 header"));
    }
    let word = |o: usize| <[u8; 8]>::try_from(&bytes[o..o + 8]).expect("8-byte slice");
    let rows = u64::from_le_bytes(word(8)) as usize;
    let cols = u64::from_le_bytes(word(16)) as usize;
    let dz = f64::from_le_bytes(word(24));
    let dt_snapshot = f64::from_le_bytes(word(32));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| format_error(path, "header dimensions overflow"))?;
    if bytes.len() - HEADER_LEN != expected {
        return Err(format_error(
            path,
            format!("{rows}x{cols} header but {} payload bytes", bytes.len() - HEADER_LEN),
        ));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Matrix {
        rows,
        cols,
        dz,
        dt_snapshot,
        data,
    })
}

pub fn write_text_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_atomic(path, |w| {
        for i in 0..m.rows {
            let line: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    })
}

pub fn read_text_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let reader = BufReader::new(open(path)?);
    let mut rows = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format_error(path, format!("line {}: {e}", no + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

/// CSV with a header line; `columns` must all have the same length.
pub fn write_csv(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    if header.len() != columns.len() {
        return Err(Error::InvalidParameter("header and column counts differ".into()));
    }
    let n = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidParameter("CSV columns differ in length".into()));
    }
    write_atomic(path, |w| {
        writeln!(w, "{}", header.join(","))?;
        for i in 0..n {
            let line: Vec<String> = columns.iter().map(|c| c[i].to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    })
}

/// Reads a CSV written by [`write_csv`] into its header and columns.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = BufReader::new(open(path)?).lines();
    let header: Vec<String> = match lines.next() {
        Some(h) => h?.split(',').map(|s| s.trim().to_string()).collect(),
        None => return Err(format_error(path, "empty file")),
    };
    let mut columns = vec![Vec::new(); header.len()];
    for (no, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(format_error(path, format!("line {}: {} fields", no + 2, fields.len())));
        }
        for (col, f) in columns.iter_mut().zip(fields) {
            col.push(
                f.trim()
                    .parse()
                    .map_err(|e| format_error(path, format!("line {}: {e}", no + 2)))?,
            );
        }
    }
    Ok((header, columns))
}

/// Which encodings of each matrix to write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixFormats {
    pub text: bool,
    pub binary: bool,
}

impl Default for MatrixFormats {
    fn default() -> Self {
        Self {
            text: true,
            binary: true,
        }
    }
}

/// Writes `stem.csv` and/or `stem.bin`; returns the paths written.
pub fn write_matrix(dir: &Path, stem: &str, m: &Matrix, formats: MatrixFormats) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let result = (|| {
        if formats.text {
            let p = dir.join(format!("{stem}.csv"));
            write_text_matrix(&p, m)?;
            written.push(p);
        }
        if formats.binary {
            let p = dir.join(format!("{stem}.bin"));
            write_binary_matrix(&p, m)?;
            written.push(p);
        }
        Ok(())
    })();
    match result {
        Ok(()) => Ok(written),
        Err(e) => {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            Err(e)
        }
    }
}

/// Header file name written by [`write_snapshot_series`].
pub const SNAPSHOT_HEADER: &str = "snapshots_header.txt";

/// Header text plus one density matrix per species (and any `extra`
/// matrices of the same shape, e.g. the depleted density). Any file
/// written before a failure is removed.
pub fn write_snapshot_series(
    series: &SnapshotSeries,
    dir: &Path,
    dt_snapshot: f64,
    parameters: &BTreeMap<String, String>,
    extra: &[(&str, Vec<Vec<f64>>)],
    formats: MatrixFormats,
) -> Result<Vec<PathBuf>> {
    if series.is_empty() {
        return Err(Error::SeriesTooShort("cannot write an empty snapshot series".into()));
    }
    let grid = &series.grid;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| -> Result<()> {
        let mut header = String::new();
        header.push_str(&format!("n_points = {}\n", grid.n_points()));
        header.push_str(&format!("half_width = {}\n", grid.half_width()));
        header.push_str(&format!("dz = {}\n", grid.dz()));
        header.push_str(&format!("rows = {}\n", series.len()));
        header.push_str(&format!("dt_snapshot = {dt_snapshot}\n"));
        header.push_str(&format!("steps = {}\n", series.steps));
        let times: Vec<String> = series.times.iter().map(|t| t.to_string()).collect();
        header.push_str(&format!("times = {}\n", times.join(",")));
        for (k, v) in parameters {
            header.push_str(&format!("param.{k} = {v}\n"));
        }
        let p = dir.join(SNAPSHOT_HEADER);
        write_text(&p, &header)?;
        written.push(p);

        for species in [Species::Condensate, Species::Impurity] {
            let m = Matrix::from_rows(&series.densities(species), grid.dz(), dt_snapshot)?;
            written.extend(write_matrix(
                dir,
                &format!("density_{}", species.as_str()),
                &m,
                formats,
            )?);
        }
        for (stem, rows) in extra {
            let m = Matrix::from_rows(rows, grid.dz(), dt_snapshot)?;
            written.extend(write_matrix(dir, stem, &m, formats)?);
        }
        Ok(())
    })();
    match result {
        Ok(()) => Ok(written),
        Err(e) => {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            Err(e)
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut f = open(path)?;
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Run outcome recorded in the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    BlowUp,
    Unconverged,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::BlowUp => "blow_up",
            RunStatus::Unconverged => "unconverged",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Ok => 0,
            RunStatus::BlowUp => 3,
            RunStatus::Unconverged => 4,
        }
    }

    /// The worse of two outcomes.
    pub fn combine(self, other: RunStatus) -> RunStatus {
        self.max(other)
    }

    fn rank(self) -> u8 {
        match self {
            RunStatus::Ok => 0,
            RunStatus::Unconverged => 1,
            RunStatus::BlowUp => 2,
        }
    }

    fn max(self, other: RunStatus) -> RunStatus {
        if other.rank() > self.rank() {
            other
        } else {
            self
        }
    }
}

/// Everything recorded about a run apart from checksums.
#[derive(Debug, Clone)]
pub struct ManifestInfo {
    pub config: BTreeMap<String, String>,
    pub wall_time_s: f64,
    pub n_points: usize,
    pub half_width: f64,
    pub steps: usize,
    pub convergence: BTreeMap<String, bool>,
    pub status: RunStatus,
    pub notes: Vec<String>,
}

/// Checksums every file in `files` (paths relative to `dir` in the output)
/// and writes the manifest last.
pub fn write_manifest(dir: &Path, info: &ManifestInfo, files: &[PathBuf]) -> Result<PathBuf> {
    let mut sums = serde_json::Map::new();
    let mut sorted: Vec<&PathBuf> = files.iter().collect();
    sorted.sort();
    sorted.dedup();
    for f in sorted {
        let rel = f.strip_prefix(dir).unwrap_or(f);
        sums.insert(rel.to_string_lossy().replace('\\', "/"), Value::String(sha256_file(f)?));
    }
    let doc = json!({
        "code_version": concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")),
        "config": info.config,
        "wall_time_s": info.wall_time_s,
        "grid": {"n_points": info.n_points, "half_width": info.half_width},
        "steps": info.steps,
        "convergence": info.convergence,
        "status": info.status.as_str(),
        "notes": info.notes,
        "files": sums,
    });
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&doc).expect("manifest serializes") + "\n";
    write_text(&path, &text)?;
    Ok(path)
}

/// Checks that every file listed in the manifest exists with the recorded
/// checksum.
pub fn verify_manifest(dir: &Path) -> Result<Value> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|_| Error::MissingInput(path.clone()))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| format_error(&path, e.to_string()))?;
    let files = doc["files"]
        .as_object()
        .ok_or_else(|| format_error(&path, "no files table"))?;
    for (rel, sum) in files {
        let actual = sha256_file(&dir.join(rel))?;
        if Some(actual.as_str()) != sum.as_str() {
            return Err(format_error(&dir.join(rel), "checksum differs from manifest"));
        }
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_row_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix::from_rows(&[vec![0.5; 8]], 0.25, 0.1).unwrap();
        let p = dir.path().join("m.bin");
        write_binary_matrix(&p, &m).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 64 + 64);
        let back = read_binary_matrix(&p).unwrap();
        assert_eq!((back.rows, back.cols), (1, 8));
        assert_eq!(back, m);
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], b"BECIMP01");
        assert!(bytes[40..64].iter().all(|&b| b == 0));
    }

    #[test]
    fn corrupt_binary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        fs::write(&p, b"NOTMAGIC").unwrap();
        assert!(matches!(read_binary_matrix(&p), Err(Error::Format { .. })));
        let m = Matrix::from_rows(&[vec![1.0, 2.0]], 1.0, 1.0).unwrap();
        write_binary_matrix(&p, &m).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_binary_matrix(&p), Err(Error::Format { .. })));
        assert!(matches!(
            read_binary_matrix(&dir.path().join("absent.bin")),
            Err(Error::MissingInput(_))
        ));
    }

    #[test]
    fn failed_write_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        let r = write_atomic(&p, |w| {
            w.write_all(b"half")?;
            Err(std::io::Error::other("disk full"))
        });
        assert!(r.is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(&p, &["z", "n"], &[&[0.1, 0.2], &[1e-300, -3.5]]).unwrap();
        let (h, c) = read_csv(&p).unwrap();
        assert_eq!(h, vec!["z", "n"]);
        assert_eq!(c, vec![vec![0.1, 0.2], vec![1e-300, -3.5]]);
        assert!(write_csv(&p, &["a"], &[&[1.0], &[2.0]]).is_err());
    }

    #[test]
    fn manifest_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        write_text(&f, "hello\n").unwrap();
        let info = ManifestInfo {
            config: BTreeMap::new(),
            wall_time_s: 0.0,
            n_points: 8,
            half_width: 1.0,
            steps: 0,
            convergence: BTreeMap::new(),
            status: RunStatus::Ok,
            notes: vec![],
        };
        write_manifest(dir.path(), &info, std::slice::from_ref(&f)).unwrap();
        let doc = verify_manifest(dir.path()).unwrap();
        assert_eq!(
            doc["files"]["a.txt"],
            "5891b5b522d5df086d0ff0b110fbd9d21bb4fc7163af34d08286a2e846f6be03"
        );
        fs::write(&f, "tampered\n").unwrap();
        assert!(verify_manifest(dir.path()).is_err());
    }

    #[test]
    fn status_ordering() {
        assert_eq!(RunStatus::Ok.combine(RunStatus::Unconverged), RunStatus::Unconverged);
        assert_eq!(RunStatus::BlowUp.combine(RunStatus::Unconverged), RunStatus::BlowUp);
        assert_eq!(RunStatus::Unconverged.exit_code(), 4);
    }

    proptest! {
        #[test]
        fn text_and_binary_agree(rows in 1usize..5, cols in 1usize..9, seed in proptest::collection::vec(-1e6f64..1e6, 40)) {
            let dir = tempfile::tempdir().unwrap();
            let data: Vec<Vec<f64>> = (0..rows)
                .map(|i| (0..cols).map(|j| seed[(i * cols + j) % seed.len()] / 7.0).collect())
                .collect();
            let m = Matrix::from_rows(&data, 0.01, 0.1).unwrap();
            write_matrix(dir.path(), "m", &m, MatrixFormats::default()).unwrap();
            let text = read_text_matrix(&dir.path().join("m.csv")).unwrap();
            let bin = read_binary_matrix(&dir.path().join("m.bin")).unwrap();
            prop_assert_eq!(text.len(), bin.rows);
            for (i, row) in text.iter().enumerate() {
                for (a, b) in row.iter().zip(bin.row(i)) {
                    prop_assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
                }
            }
        }
    }
}
