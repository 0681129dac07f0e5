//! Dataset containers, file formats and preprocessing.
//!
//! Two on-disk layouts are read:
//!
//! * `ucr_tsv`: one sample per line, the first field is the label and the
//!   remaining fields are the values of a single channel. Fields may be
//!   separated by tabs, commas or spaces. Trailing `NaN` fields mark a shorter
//!   series and are replaced by zero padding. A directory holding
//!   `*_TRAIN.tsv` / `*_TEST.tsv` (and optionally `*_VAL.tsv`) is also
//!   accepted.
//! * `csv_dir`: a directory with `manifest.json` (`length`, `channels`,
//!   `classes`) and one `train.csv` / `val.csv` / `test.csv` per split. Each
//!   CSV has a header `label,c0_t0,c0_t1,...` and stores channels
//!   channel-major. An empty label field means unlabeled.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::TimeSeries;

/// Variance floor used by z-score normalization.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Samples of a common shape with labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<TimeSeries>,
    length: usize,
    channels: usize,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<TimeSeries>, classes: usize, split: Split) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Dataset(format!("{} split is empty", split.as_str())))?;
        let (length, channels) = (first.len(), first.channels());
        for (i, s) in samples.iter().enumerate() {
            if s.len() != length || s.channels() != channels {
                return Err(Error::Dataset(format!(
                    "sample {i} has shape {}x{}, expected {length}x{channels}",
                    s.len(),
                    s.channels()
                )));
            }
            if let Some(y) = s.label() {
                if y >= classes {
                    return Err(Error::Dataset(format!(
                        "sample {i} has label {y}, expected < {classes}"
                    )));
                }
            }
        }
        Ok(Self {
            samples,
            length,
            channels,
            classes,
            split,
        })
    }

    pub fn samples(&self) -> &[TimeSeries] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.samples.iter().map(TimeSeries::label).collect()
    }

    /// Labels, failing if any sample is unlabeled.
    pub fn require_labels(&self) -> Result<Vec<usize>> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.label().ok_or_else(|| {
                    Error::Dataset(format!("{} sample {i} has no label", self.split.as_str()))
                })
            })
            .collect()
    }

    pub fn is_labeled(&self) -> bool {
        self.samples.iter().all(|s| s.label().is_some())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for y in self.samples.iter().filter_map(TimeSeries::label) {
            counts[y] += 1;
        }
        counts
    }

    /// Copy with every label removed.
    pub fn without_labels(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.set_label(None);
        }
        out
    }

    fn subset(&self, idx: &[usize], split: Split) -> Result<Self> {
        Dataset::new(
            idx.iter().map(|&i| self.samples[i].clone()).collect(),
            self.classes,
            split,
        )
    }
}

/// Train / validation / test splits of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub test: Option<Dataset>,
}

/// Per-channel mean and standard deviation from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn fit(train: &Dataset) -> Self {
        let d = train.channels();
        let mut sum = vec![0.0; d];
        let mut count = 0usize;
        for s in train.samples() {
            for (c, acc) in sum.iter_mut().enumerate() {
                *acc += s.channel(c).sum();
            }
            count += s.len();
        }
        let mean: Vec<f64> = sum.iter().map(|v| v / count as f64).collect();
        let mut sq = vec![0.0; d];
        for s in train.samples() {
            for (c, acc) in sq.iter_mut().enumerate() {
                *acc += s.channel(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
            }
        }
        let std = sq
            .iter()
            .map(|v| (v / count as f64).max(VARIANCE_FLOOR).sqrt())
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let samples = data
            .samples()
            .iter()
            .map(|s| {
                let mut v = s.values().clone();
                for (c, mut col) in v.columns_mut().into_iter().enumerate() {
                    col.mapv_inplace(|x| (x - self.mean[c]) / self.std[c]);
                }
                TimeSeries::new(v, s.label())
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples, data.classes(), data.split())
    }
}

impl DatasetSplits {
    /// Z-scores every split with training statistics.
    pub fn normalized(&self) -> Result<(DatasetSplits, Normalization)> {
        let norm = Normalization::fit(&self.train);
        let splits = DatasetSplits {
            train: norm.apply(&self.train)?,
            val: self.val.as_ref().map(|d| norm.apply(d)).transpose()?,
            test: self.test.as_ref().map(|d| norm.apply(d)).transpose()?,
        };
        Ok((splits, norm))
    }

    /// Fills in missing validation/test splits by stratified sampling.
    ///
    /// With only a training split the data is divided 64/16/20. With a test
    /// split but no validation split, 20% of the training split (16% of the
    /// 80%) becomes validation.
    pub fn complete<R: Rng + ?Sized>(self, rng: &mut R) -> Result<DatasetSplits> {
        match (&self.val, &self.test) {
            (Some(_), Some(_)) => Ok(self),
            (None, None) => {
                let parts = stratified_split(&self.train, &[0.64, 0.16, 0.20], rng)?;
                let mut it = parts.into_iter();
                Ok(DatasetSplits {
                    train: it.next().expect("train part"),
                    val: Some(it.next().expect("val part")),
                    test: Some(it.next().expect("test part")),
                })
            }
            (None, Some(_)) => {
                let parts = stratified_split(&self.train, &[0.8, 0.2], rng)?;
                let mut it = parts.into_iter();
                Ok(DatasetSplits {
                    train: it.next().expect("train part"),
                    val: Some(it.next().expect("val part")),
                    test: self.test,
                })
            }
            (Some(_), None) => Err(Error::Dataset(
                "validation split given without a test split".into(),
            )),
        }
    }
}

/// Splits by class so every part keeps the class proportions. Fractions are
/// applied per class with rounding; the last part receives the remainder.
pub fn stratified_split<R: Rng + ?Sized>(
    data: &Dataset,
    fractions: &[f64],
    rng: &mut R,
) -> Result<Vec<Dataset>> {
    let splits = [Split::Train, Split::Val, Split::Test];
    let split_for = |k: usize, n: usize| {
        if n == 2 && k == 1 {
            Split::Val
        } else {
            splits[k.min(2)]
        }
    };
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); data.classes() + 1];
    for (i, s) in data.samples().iter().enumerate() {
        groups[s.label().unwrap_or(data.classes())].push(i);
    }
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); fractions.len()];
    for mut group in groups.into_iter().filter(|g| !g.is_empty()) {
        group.shuffle(rng);
        let n = group.len();
        let mut start = 0;
        for (k, frac) in fractions.iter().enumerate() {
            let end = if k + 1 == fractions.len() {
                n
            } else {
                (start + (frac * n as f64).round() as usize).min(n)
            };
            parts[k].extend_from_slice(&group[start..end]);
            start = end;
        }
    }
    parts
        .iter()
        .enumerate()
        .map(|(k, idx)| {
            let mut idx = idx.clone();
            idx.sort_unstable();
            data.subset(&idx, split_for(k, fractions.len()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    UcrTsv,
    CsvDir,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ucr_tsv" | "ucr" | "tsv" => Ok(DataFormat::UcrTsv),
            "csv_dir" | "csv" => Ok(DataFormat::CsvDir),
            other => Err(Error::InvalidArgument(format!(
                "unknown data format '{other}' (expected ucr_tsv or csv_dir)"
            ))),
        }
    }
}

/// Reads a dataset and z-scores it with training-split statistics.
pub fn load_dataset(path: &Path, format: DataFormat) -> Result<DatasetSplits> {
    Ok(load_dataset_raw(path, format)?.normalized()?.0)
}

/// Reads a dataset without normalization.
pub fn load_dataset_raw(path: &Path, format: DataFormat) -> Result<DatasetSplits> {
    match format {
        DataFormat::UcrTsv => load_ucr(path),
        DataFormat::CsvDir => load_csv_dir(path),
    }
}

/// One parsed UCR line: raw label text and values (trailing NaNs kept).
#[derive(Debug, Clone, PartialEq)]
pub struct UcrRow {
    pub label: f64,
    pub values: Vec<f64>,
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn parse_number(field: &str, path: &Path, line: usize, column: usize) -> Result<f64> {
    field.parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("field {column} ('{field}') is not a number"),
    })
}

/// Parses a single `label<TAB>v1<TAB>v2...` line.
pub fn parse_ucr_line(line: &str, path: &Path, line_no: usize) -> Result<UcrRow> {
    let fields = split_fields(line.trim_end());
    if fields.len() < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: "expected a label and at least one value".into(),
        });
    }
    let label = parse_number(fields[0], path, line_no, 1)?;
    if !label.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("label '{}' is not finite", fields[0]),
        });
    }
    let values = fields[1..]
        .iter()
        .enumerate()
        .map(|(k, f)| parse_number(f, path, line_no, k + 2))
        .collect::<Result<Vec<f64>>>()?;
    Ok(UcrRow { label, values })
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_ucr_file(path: &Path) -> Result<Vec<(UcrRow, usize)>> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_ucr_line(line, path, i + 1)?;
        match width {
            None => width = Some(row.values.len()),
            Some(w) if w != row.values.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("ragged row: {} values, expected {w}", row.values.len()),
                })
            }
            _ => {}
        }
        rows.push((row, i + 1));
    }
    if rows.is_empty() {
        return Err(Error::Dataset(format!("{} contains no samples", path.display())));
    }
    Ok(rows)
}

fn find_split_file(dir: &Path, suffix: &str) -> Result<Option<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().to_uppercase();
        if name.ends_with(&format!("_{suffix}.TSV")) || name.ends_with(&format!("_{suffix}.TXT")) {
            found.push(entry.path());
        }
    }
    found.sort();
    Ok(found.into_iter().next())
}

fn load_ucr(path: &Path) -> Result<DatasetSplits> {
    let files: Vec<(Split, PathBuf)> = if path.is_dir() {
        let mut files = Vec::new();
        for (split, suffix) in [(Split::Train, "TRAIN"), (Split::Val, "VAL"), (Split::Test, "TEST")] {
            if let Some(p) = find_split_file(path, suffix)? {
                files.push((split, p));
            }
        }
        if !files.iter().any(|(s, _)| *s == Split::Train) {
            return Err(Error::Dataset(format!(
                "no *_TRAIN.tsv file in {}",
                path.display()
            )));
        }
        files
    } else {
        vec![(Split::Train, path.to_path_buf())]
    };

    let mut parsed = Vec::new();
    for (split, p) in &files {
        parsed.push((*split, p.clone(), read_ucr_file(p)?));
    }

    // Non-negative integer labels are kept verbatim; anything else is mapped
    // to the rank of its value among all distinct labels.
    let all_labels: Vec<f64> = parsed
        .iter()
        .flat_map(|(_, _, rows)| rows.iter().map(|(r, _)| r.label))
        .collect();
    let verbatim = all_labels.iter().all(|&l| l >= 0.0 && l.fract() == 0.0);
    let distinct: Vec<f64> = {
        let set: BTreeSet<u64> = all_labels.iter().map(|l| l.to_bits()).collect();
        let mut v: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let map_label = |l: f64| -> usize {
        if verbatim {
            l as usize
        } else {
            distinct.iter().position(|&d| d == l).expect("label present")
        }
    };
    let classes = if verbatim {
        all_labels.iter().map(|&l| l as usize).max().unwrap_or(0) + 1
    } else {
        distinct.len()
    };

    let max_len = parsed
        .iter()
        .flat_map(|(_, _, rows)| rows.iter().map(|(r, _)| effective_len(&r.values)))
        .max()
        .unwrap_or(0);
    if max_len < 2 {
        return Err(Error::Dataset("series must have at least 2 values".into()));
    }

    let mut out: Vec<(Split, Dataset)> = Vec::new();
    for (split, p, rows) in parsed {
        let mut samples = Vec::with_capacity(rows.len());
        for (row, line) in rows {
            let n = effective_len(&row.values);
            if row.values[..n].iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    path: p.clone(),
                    line,
                    message: "non-finite value before the end of the series".into(),
                });
            }
            let mut v = row.values[..n].to_vec();
            v.resize(max_len, 0.0);
            samples.push(TimeSeries::univariate(&v, Some(map_label(row.label)))?);
        }
        out.push((split, Dataset::new(samples, classes, split)?));
    }
    let mut splits = DatasetSplits {
        train: out.remove(0).1,
        val: None,
        test: None,
    };
    for (split, d) in out {
        match split {
            Split::Val => splits.val = Some(d),
            Split::Test => splits.test = Some(d),
            Split::Train => unreachable!("train split handled first"),
        }
    }
    Ok(splits)
}

/// Length after dropping trailing NaN padding.
fn effective_len(values: &[f64]) -> usize {
    values.iter().rposition(|v| !v.is_nan()).map_or(0, |i| i + 1)
}

/// Sidecar describing a `csv_dir` dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvManifest {
    pub length: usize,
    pub channels: usize,
    pub classes: usize,
}

fn load_csv_dir(dir: &Path) -> Result<DatasetSplits> {
    let manifest_path = dir.join("manifest.json");
    let manifest: CsvManifest = serde_json::from_str(&read_to_string(&manifest_path)?)?;
    if manifest.length < 2 || manifest.channels < 1 {
        return Err(Error::Dataset(format!(
            "manifest declares invalid shape {}x{}",
            manifest.length, manifest.channels
        )));
    }
    let read = |split: Split| -> Result<Option<Dataset>> {
        let p = dir.join(format!("{}.csv", split.as_str()));
        if !p.exists() {
            return Ok(None);
        }
        read_csv_split(&p, &manifest, split).map(Some)
    };
    let train = read(Split::Train)?
        .ok_or_else(|| Error::Dataset(format!("no train.csv in {}", dir.display())))?;
    Ok(DatasetSplits {
        train,
        val: read(Split::Val)?,
        test: read(Split::Test)?,
    })
}

fn read_csv_split(path: &Path, manifest: &CsvManifest, split: Split) -> Result<Dataset> {
    let text = read_to_string(path)?;
    let width = manifest.length * manifest.channels;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "missing header".into(),
    })?;
    let header_fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if header_fields.first() != Some(&"label") || header_fields.len() != width + 1 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "header must be 'label' followed by {width} columns, found {} fields",
                header_fields.len()
            ),
        });
    }
    let mut samples = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width + 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("ragged row: {} fields, expected {}", fields.len(), width + 1),
            });
        }
        let label = if fields[0].is_empty() {
            None
        } else {
            Some(fields[0].parse::<usize>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("label '{}' is not a non-negative integer", fields[0]),
            })?)
        };
        let mut values = Array2::<f64>::zeros((manifest.length, manifest.channels));
        for (k, f) in fields[1..].iter().enumerate() {
            let v = parse_number(f, path, line_no, k + 2)?;
            values[[k % manifest.length, k / manifest.length]] = v;
        }
        let ts = TimeSeries::new(values, label).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        samples.push(ts);
    }
    if samples.is_empty() {
        return Err(Error::Dataset(format!("{} contains no samples", path.display())));
    }
    Dataset::new(samples, manifest.classes, split)
}

/// Writes splits in the `csv_dir` layout. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv_dir(dir: &Path, splits: &DatasetSplits) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let train = &splits.train;
    let manifest = CsvManifest {
        length: train.length(),
        channels: train.channels(),
        classes: train.classes(),
    };
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(&manifest_path, e))?;
    for d in std::iter::once(train)
        .chain(splits.val.as_ref())
        .chain(splits.test.as_ref())
    {
        let p = dir.join(format!("{}.csv", d.split().as_str()));
        let file = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut header = String::from("label");
        for c in 0..manifest.channels {
            for t in 0..manifest.length {
                header.push_str(&format!(",c{c}_t{t}"));
            }
        }
        writeln!(w, "{header}").map_err(|e| Error::io(&p, e))?;
        for s in d.samples() {
            let mut line = s.label().map(|y| y.to_string()).unwrap_or_default();
            for c in 0..manifest.channels {
                for v in s.channel(c) {
                    line.push(',');
                    line.push_str(&v.to_string());
                }
            }
            writeln!(w, "{line}").map_err(|e| Error::io(&p, e))?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parses_single_line() {
        let row = parse_ucr_line("2\t0.1\t0.2\t0.3", Path::new("x.tsv"), 1).unwrap();
        assert_eq!(row.label, 2.0);
        assert_eq!(row.values, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn non_numeric_field_reports_line() {
        let err = parse_ucr_line("1\t0.5\tabc", Path::new("x.tsv"), 7).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 7);
                assert!(message.contains("field 3"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ucr_file_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("toy_TRAIN.tsv");
        fs::write(&p, "2\t0.1\t0.2\t0.3\n0\t1\t2\t3\n").unwrap();
        let splits = load_dataset_raw(&p, DataFormat::UcrTsv).unwrap();
        let d = &splits.train;
        assert_eq!((d.len(), d.length(), d.channels(), d.classes()), (2, 3, 1, 3));
        assert_eq!(d.samples()[0].label(), Some(2));

        let ragged = dir.path().join("bad.tsv");
        fs::write(&ragged, "1\t0.1\t0.2\n1\t0.3\n").unwrap();
        match load_dataset_raw(&ragged, DataFormat::UcrTsv).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let empty = dir.path().join("empty.tsv");
        fs::write(&empty, "\n").unwrap();
        assert!(load_dataset_raw(&empty, DataFormat::UcrTsv).is_err());
    }

    #[test]
    fn negative_labels_are_ranked_and_nan_tail_is_padded() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("a_TRAIN.tsv"),
            "-1\t1\t2\t3\t4\n1\t1\t2\tNaN\tNaN\n",
        )
        .unwrap();
        fs::write(dir.path().join("a_TEST.tsv"), "1\t5\t6\t7\t8\n").unwrap();
        let s = load_dataset_raw(dir.path(), DataFormat::UcrTsv).unwrap();
        assert_eq!(s.train.classes(), 2);
        assert_eq!(s.train.samples()[0].label(), Some(0));
        assert_eq!(s.train.samples()[1].channel(0).to_vec(), vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(s.test.unwrap().samples()[0].label(), Some(1));
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let samples = (0..4)
            .map(|i| TimeSeries::univariate(&[3.0; 5], Some(i % 2)).unwrap())
            .collect();
        let d = Dataset::new(samples, 2, Split::Train).unwrap();
        let splits = DatasetSplits {
            train: d,
            val: None,
            test: None,
        };
        let (n, norm) = splits.normalized().unwrap();
        assert_eq!(norm.std[0], VARIANCE_FLOOR.sqrt());
        assert!(n.train.samples().iter().all(|s| s.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stratified_split_keeps_proportions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let samples = (0..100)
            .map(|i| TimeSeries::univariate(&[i as f64, 0.0], Some(usize::from(i >= 50))).unwrap())
            .collect();
        let d = Dataset::new(samples, 2, Split::Train).unwrap();
        let splits = DatasetSplits {
            train: d,
            val: None,
            test: None,
        }
        .complete(&mut rng)
        .unwrap();
        assert_eq!(splits.train.class_counts(), vec![32, 32]);
        assert_eq!(splits.val.as_ref().unwrap().class_counts(), vec![8, 8]);
        assert_eq!(splits.test.as_ref().unwrap().class_counts(), vec![10, 10]);
        assert_eq!(splits.test.unwrap().split(), Split::Test);
    }

    #[test]
    fn csv_dir_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("manifest.json"),
            r#"{"length": 2, "channels": 1, "classes": 2}"#,
        )
        .unwrap();
        fs::write(dir.path().join("train.csv"), "label,c0_t0,c0_t1\n1,0.5,0.25\n0,1\n").unwrap();
        match load_dataset_raw(dir.path(), DataFormat::CsvDir).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(dir.path().join("train.csv"), "label,c0_t0,c0_t1\n").unwrap();
        assert!(load_dataset_raw(dir.path(), DataFormat::CsvDir).is_err());
    }
}
