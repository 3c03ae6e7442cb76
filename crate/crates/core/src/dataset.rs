//! Classifier data preparation: embedding files, class balancing and
//! stratified train/validation/test splits.
//!
//! Sampling uses `ChaCha8Rng::seed_from_u64(seed)` and the Fisher-Yates
//! shuffle of `rand::seq::SliceRandom`, so results are reproducible from the
//! algorithm name and seed alone.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::FinalLabel;
use crate::error::{Error, Origin, Result};
use crate::ethogram::find_column;

pub const EMBEDDING_DIM: usize = 1024;
const EMBEDDING_BYTES: usize = EMBEDDING_DIM * 4;

/// Training class, in output-unit order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlayClass {
    ActivePlaying,
    NonActivePlaying,
    NotPlaying,
}

impl PlayClass {
    pub const ALL: [PlayClass; 3] = [PlayClass::ActivePlaying, PlayClass::NonActivePlaying, PlayClass::NotPlaying];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PlayClass::ActivePlaying => "Active Playing",
            PlayClass::NonActivePlaying => "Non-Active Playing",
            PlayClass::NotPlaying => "Not Playing",
        }
    }

    /// `None` for labels that never enter training.
    pub fn from_label(label: FinalLabel) -> Option<Self> {
        match label {
            FinalLabel::ActivePlaying => Some(PlayClass::ActivePlaying),
            FinalLabel::NonActivePlaying => Some(PlayClass::NonActivePlaying),
            FinalLabel::NotPlaying => Some(PlayClass::NotPlaying),
            FinalLabel::OutOfView | FinalLabel::Management => None,
        }
    }
}

impl fmt::Display for PlayClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlayClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let label: FinalLabel = s.parse()?;
        PlayClass::from_label(label)
            .ok_or_else(|| Error::Parse { input: s.to_string(), message: "label is not a training class".into() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Parse { input: s.to_string(), message: "expected train, val or test".into() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub source: PathBuf,
}

/// Reads a 1024-component embedding.
///
/// Files are raw little-endian f32; a `.npy` file (`<f4`, C order, 1024
/// elements) is accepted too, its header being skipped.
pub fn load_embedding(path: &Path) -> Result<EmbeddingVector> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embedding(&bytes, path)
}

pub fn decode_embedding(bytes: &[u8], path: &Path) -> Result<EmbeddingVector> {
    let format = |message: String| Error::Format { path: path.to_path_buf(), message };
    let payload = if bytes.starts_with(b"\x93NUMPY") {
        npy_payload(bytes).map_err(format)?
    } else {
        bytes
    };
    if payload.len() != EMBEDDING_BYTES {
        return Err(format(format!(
            "expected {EMBEDDING_BYTES} bytes ({EMBEDDING_DIM} f32 values), found {} bytes ({} values)",
            payload.len(),
            payload.len() as f64 / 4.0
        )));
    }
    let values: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data { path: path.to_path_buf(), message: format!("component {i} is {}", values[i]) });
    }
    Ok(EmbeddingVector { values, source: path.to_path_buf() })
}

fn npy_payload(bytes: &[u8]) -> std::result::Result<&[u8], String> {
    let major = *bytes.get(6).ok_or("truncated npy header")?;
    let (len, start) = match major {
        1 => (u16::from_le_bytes([bytes.get(8).copied().unwrap_or(0), bytes.get(9).copied().unwrap_or(0)]) as usize, 10),
        2 | 3 => {
            let b = bytes.get(8..12).ok_or("truncated npy header")?;
            (u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize, 12)
        }
        v => return Err(format!("unsupported npy version {v}")),
    };
    let header = bytes.get(start..start + len).ok_or("truncated npy header")?;
    let header = String::from_utf8_lossy(header);
    if !header.contains("'<f4'") {
        return Err(format!("npy dtype must be '<f4': {}", header.trim()));
    }
    if header.contains("'fortran_order': True") {
        return Err("npy arrays must be C-ordered".into());
    }
    Ok(&bytes[start + len..])
}

/// Writes `values` as raw little-endian f32.
pub fn save_embedding(path: &Path, values: &[f32]) -> Result<()> {
    if values.len() != EMBEDDING_DIM {
        return Err(Error::Invalid(format!("embedding has {} components, expected {EMBEDDING_DIM}", values.len())));
    }
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Indices of a class-balanced subset: every class shuffled and cut to the
/// minority count, then the concatenation shuffled once more.
pub fn stratified_downsample(classes: &[PlayClass], seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); PlayClass::ALL.len()];
    for (i, c) in classes.iter().enumerate() {
        by_class[c.index()].push(i);
    }
    if let Some(k) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::Invalid(format!("class `{}` has no samples", PlayClass::ALL[k])));
    }
    let minority = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let mut out = Vec::with_capacity(minority * by_class.len());
    for idx in &mut by_class {
        idx.shuffle(&mut rng);
        out.extend_from_slice(&idx[..minority]);
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Largest-remainder apportionment of `total` by `fractions`; ties go to the
/// earlier share.
pub fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

fn check_fractions(fractions: [f64; 3]) -> Result<()> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Range(format!("split fractions must lie in [0, 1], got {fractions:?}")));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Range(format!("split fractions must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Class × split counts. Split totals are the largest-remainder apportionment
/// of the whole set; every cell is the floor or ceiling of
/// `fraction × class count`, and rows sum to the class counts.
pub fn split_counts(class_counts: &[usize], fractions: [f64; 3]) -> Result<Vec<[usize; 3]>> {
    check_fractions(fractions)?;
    let total: usize = class_counts.iter().sum();
    let targets = apportion(total, &fractions);
    let floors: Vec<[usize; 3]> = class_counts
        .iter()
        .map(|&c| fractions.map(|f| (f * c as f64 + 1e-9).floor() as usize))
        .collect();
    // cells that may be rounded up: those with a fractional part
    let open: Vec<[bool; 3]> = class_counts
        .iter()
        .zip(&floors)
        .map(|(&c, fl)| {
            let mut o = [false; 3];
            for s in 0..3 {
                o[s] = fractions[s] * c as f64 - fl[s] as f64 > 1e-9;
            }
            o
        })
        .collect();
    let extra: Vec<usize> = class_counts.iter().zip(&floors).map(|(&c, fl)| c - fl.iter().sum::<usize>()).collect();

    let mut demand = [0i64; 3];
    for s in 0..3 {
        demand[s] = targets[s] as i64 - floors.iter().map(|f| f[s] as i64).sum::<i64>();
    }
    let mut cells = floors.clone();
    if demand.iter().all(|&d| d >= 0) && assign_extras(0, &extra, &open, &mut demand, &mut cells) {
        return Ok(cells);
    }
    // The apportioned totals are not reachable under per-class rounding;
    // fall back to any per-class rounding.
    let mut cells = floors;
    for (k, &e) in extra.iter().enumerate() {
        let mut order: Vec<usize> = (0..3).filter(|&s| open[k][s]).collect();
        let frac = |s: usize| fractions[s] * class_counts[k] as f64 - cells[k][s] as f64;
        order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
        for &s in order.iter().take(e) {
            cells[k][s] += 1;
        }
    }
    Ok(cells)
}

/// Backtracking over which open cells of each class receive its extra units,
/// preferring splits with the largest outstanding demand.
fn assign_extras(k: usize, extra: &[usize], open: &[[bool; 3]], demand: &mut [i64; 3], cells: &mut [[usize; 3]]) -> bool {
    if k == extra.len() {
        return demand.iter().all(|&d| d == 0);
    }
    let mut order: Vec<usize> = (0..3).filter(|&s| open[k][s]).collect();
    order.sort_by(|&a, &b| demand[b].cmp(&demand[a]).then(a.cmp(&b)));
    let choices = combinations(&order, extra[k]);
    for choice in choices {
        if choice.iter().any(|&s| demand[s] <= 0) {
            continue;
        }
        for &s in &choice {
            demand[s] -= 1;
            cells[k][s] += 1;
        }
        if assign_extras(k + 1, extra, open, demand, cells) {
            return true;
        }
        for &s in &choice {
            demand[s] += 1;
            cells[k][s] -= 1;
        }
    }
    false
}

fn combinations(items: &[usize], r: usize) -> Vec<Vec<usize>> {
    if r == 0 {
        return vec![vec![]];
    }
    if items.len() < r {
        return vec![];
    }
    let mut out: Vec<Vec<usize>> = combinations(&items[1..], r - 1)
        .into_iter()
        .map(|mut c| {
            c.insert(0, items[0]);
            c
        })
        .collect();
    out.extend(combinations(&items[1..], r));
    out
}

/// Stratified split assignment for each sample, in input order.
pub fn stratified_split(classes: &[PlayClass], fractions: [f64; 3], seed: u64) -> Result<Vec<Split>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); PlayClass::ALL.len()];
    for (i, c) in classes.iter().enumerate() {
        by_class[c.index()].push(i);
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let cells = split_counts(&counts, fractions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Split::Train; classes.len()];
    for (idx, cell) in by_class.iter_mut().zip(&cells) {
        idx.shuffle(&mut rng);
        let mut it = idx.iter();
        for (s, &n) in Split::ALL.iter().zip(cell) {
            for &i in it.by_ref().take(n) {
                out[i] = *s;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub embedding_path: PathBuf,
    pub class: PlayClass,
}

/// Balanced, split samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledDataset {
    pub samples: Vec<Sample>,
    pub splits: Vec<Split>,
    pub seed: u64,
}

impl LabelledDataset {
    /// Downsamples `samples` to balance and assigns splits, both under `seed`.
    pub fn prepare(samples: &[Sample], fractions: [f64; 3], seed: u64) -> Result<Self> {
        let classes: Vec<PlayClass> = samples.iter().map(|s| s.class).collect();
        let keep = stratified_downsample(&classes, seed)?;
        let samples: Vec<Sample> = keep.iter().map(|&i| samples[i].clone()).collect();
        let classes: Vec<PlayClass> = samples.iter().map(|s| s.class).collect();
        let splits = stratified_split(&classes, fractions, seed)?;
        Ok(LabelledDataset { samples, splits, seed })
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in &self.samples {
            c[s.class.index()] += 1;
        }
        c
    }

    /// Rows are classes, columns splits.
    pub fn split_table(&self) -> [[usize; 3]; 3] {
        let mut t = [[0; 3]; 3];
        for (s, sp) in self.samples.iter().zip(&self.splits) {
            t[s.class.index()][*sp as usize] += 1;
        }
        t
    }

    pub fn subset(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().zip(&self.splits).filter(|(_, s)| **s == split).map(|(x, _)| x).collect()
    }
}

pub const MANIFEST_COLUMNS: [&str; 3] = ["embedding_path", "class", "split"];

pub fn write_manifest<W: Write>(sink: W, data: &LabelledDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(MANIFEST_COLUMNS)?;
    for (s, sp) in data.samples.iter().zip(&data.splits) {
        let path = s.embedding_path.to_string_lossy();
        w.write_record([path.as_ref(), s.class.as_str(), sp.as_str()])?;
    }
    w.flush().map_err(|e| Error::io("<manifest>", e))?;
    Ok(())
}

/// Manifest rows as (sample, split). Lines starting with `#` are skipped.
pub fn read_manifest<R: Read>(source: R) -> Result<Vec<(Sample, Split)>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(source);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        find_column(&headers, &[name])
            .ok_or_else(|| Error::MissingColumn { origin: Origin::default(), column: name.to_string() })
    };
    let (ip, ic, is) = (col("embedding_path")?, col("class")?, col("split")?);
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let origin = || Origin::row(row + 1);
        let get = |i: usize| rec.get(i).unwrap_or("").trim();
        let class: PlayClass = get(ic).parse().map_err(|e: Error| Error::row(origin(), e.to_string()))?;
        let split: Split = get(is).parse().map_err(|e: Error| Error::row(origin(), e.to_string()))?;
        if get(ip).is_empty() {
            return Err(Error::row(origin(), "empty embedding_path"));
        }
        out.push((Sample { embedding_path: PathBuf::from(get(ip)), class }, split));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(counts: [usize; 3]) -> Vec<PlayClass> {
        PlayClass::ALL.iter().zip(counts).flat_map(|(c, n)| std::iter::repeat(*c).take(n)).collect()
    }

    #[test]
    fn zero_file_accepted() {
        let v = decode_embedding(&[0u8; 4096], Path::new("z.bin")).unwrap();
        assert_eq!(v.values, vec![0.0; 1024]);
    }

    #[test]
    fn short_file_is_format_error() {
        let e = decode_embedding(&[0u8; 4092], Path::new("s.bin")).unwrap_err();
        assert!(matches!(e, Error::Format { .. }));
        assert!(e.to_string().contains("1023 values"), "{e}");
    }

    #[test]
    fn nan_is_data_error() {
        let mut b = vec![0u8; 4096];
        b[40..44].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_embedding(&b, Path::new("n.bin")), Err(Error::Data { .. })));
    }

    #[test]
    fn npy_header_skipped() {
        let header = "{'descr': '<f4', 'fortran_order': False, 'shape': (1024,), }";
        let mut h = header.to_string();
        while (10 + h.len() + 1) % 64 != 0 {
            h.push(' ');
        }
        h.push('\n');
        let mut b = b"\x93NUMPY\x01\x00".to_vec();
        b.extend_from_slice(&(h.len() as u16).to_le_bytes());
        b.extend_from_slice(h.as_bytes());
        b.extend((0..1024).flat_map(|i| (i as f32).to_le_bytes()));
        let v = decode_embedding(&b, Path::new("e.npy")).unwrap();
        assert_eq!(v.values[1023], 1023.0);
    }

    #[test]
    fn balancing_to_minority() {
        let cls = classes([7_609, 60_000, 120_000]);
        let keep = stratified_downsample(&cls, 3).unwrap();
        assert_eq!(keep.len(), 22_827);
        let mut counts = [0; 3];
        keep.iter().for_each(|&i| counts[cls[i].index()] += 1);
        assert_eq!(counts, [7_609; 3]);
    }

    #[test]
    fn empty_class_rejected() {
        assert!(stratified_downsample(&classes([5, 0, 3]), 1).is_err());
    }

    #[test]
    fn already_balanced_is_reshuffled_permutation() {
        let cls = classes([20, 20, 20]);
        let mut keep = stratified_downsample(&cls, 9).unwrap();
        assert_ne!(keep, (0..60).collect::<Vec<_>>());
        keep.sort();
        assert_eq!(keep, (0..60).collect::<Vec<_>>());
    }

    #[test]
    fn reference_split_total() {
        let cells = split_counts(&[7_609; 3], [0.7, 0.15, 0.15]).unwrap();
        let totals: Vec<usize> = (0..3).map(|s| cells.iter().map(|c| c[s]).sum()).collect();
        assert_eq!(totals, vec![15_979, 3_424, 3_424]);
        for c in &cells {
            assert_eq!(c.iter().sum::<usize>(), 7_609);
        }
    }

    #[test]
    fn identity_split() {
        let s = stratified_split(&classes([4, 4, 4]), [1.0, 0.0, 0.0], 0).unwrap();
        assert!(s.iter().all(|x| *x == Split::Train));
    }

    #[test]
    fn negative_fraction_rejected() {
        assert!(stratified_split(&classes([4, 4, 4]), [1.2, -0.1, -0.1], 0).is_err());
    }

    #[test]
    fn apportion_ties_to_first() {
        assert_eq!(apportion(10, &[0.5, 0.25, 0.25]), vec![5, 3, 2]);
        assert_eq!(apportion(22_827, &[0.7, 0.15, 0.15]), vec![15_979, 3_424, 3_424]);
    }

    #[test]
    fn manifest_round_trip() {
        let samples: Vec<Sample> = (0..9)
            .map(|i| Sample { embedding_path: format!("e/{i}.bin").into(), class: PlayClass::ALL[i % 3] })
            .collect();
        let d = LabelledDataset::prepare(&samples, [0.7, 0.15, 0.15], 5).unwrap();
        let mut buf = b"# seed=5\n".to_vec();
        write_manifest(&mut buf, &d).unwrap();
        let back = read_manifest(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 9);
        for ((s, sp), (s0, sp0)) in back.iter().zip(d.samples.iter().zip(&d.splits)) {
            assert_eq!(s, s0);
            assert_eq!(sp, sp0);
        }
    }
}
