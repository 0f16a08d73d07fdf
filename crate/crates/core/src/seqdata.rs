//! Event sequences: validation, JSONL storage, splits and length-bucketed
//! padded batches.
//!
//! Dataset files are JSON lines. The first line is a header `{"K": 3}`; every
//! following line holds one sequence as `{"seq": [[t, k], ...], "T": 12.5}`.
//! Floats are written in shortest round-trip form so `save ∘ load` is the
//! identity bit for bit.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix stored as rows; used for K×K causality matrices.
pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub k: usize,
}

impl Event {
    pub fn new(t: f64, k: usize) -> Self {
        Self { t, k }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence {
    pub events: Vec<Event>,
    /// Observation horizon `T`.
    pub horizon: f64,
}

impl EventSequence {
    pub fn new(events: Vec<Event>, horizon: f64) -> Self {
        Self { events, horizon }
    }

    pub fn from_pairs(pairs: &[(f64, usize)], horizon: f64) -> Self {
        Self::new(pairs.iter().map(|&(t, k)| Event::new(t, k)).collect(), horizon)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_time(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.t)
    }

    /// Gaps `t_i - t_{i-1}` with `t_0 = 0`.
    pub fn gaps(&self) -> impl Iterator<Item = f64> + '_ {
        let mut prev = 0.0;
        self.events.iter().map(move |e| {
            let g = e.t - prev;
            prev = e.t;
            g
        })
    }
}

/// First invariant an [`EventSequence`] breaks.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite { index: usize },
    NegativeTime { index: usize },
    NonMonotone { index: usize },
    TypeOutOfRange { index: usize, k: usize, num_types: usize },
    NonPositiveHorizon,
    BeyondHorizon { index: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite { index } => write!(f, "non-finite timestamp at event {index}"),
            Violation::NegativeTime { index } => write!(f, "negative timestamp at event {index}"),
            Violation::NonMonotone { index } => {
                write!(f, "non-monotone timestamps at event {index}")
            }
            Violation::TypeOutOfRange { index, k, num_types } => write!(
                f,
                "type out of range at event {index}: {k} not in [0, {num_types})"
            ),
            Violation::NonPositiveHorizon => write!(f, "horizon must be positive"),
            Violation::BeyondHorizon { index } => {
                write!(f, "event {index} lies beyond the horizon")
            }
        }
    }
}

pub fn validate(seq: &EventSequence, num_types: usize) -> std::result::Result<(), Violation> {
    let mut prev = 0.0;
    for (index, e) in seq.events.iter().enumerate() {
        if !e.t.is_finite() {
            return Err(Violation::NonFinite { index });
        }
        if e.t < 0.0 {
            return Err(Violation::NegativeTime { index });
        }
        if e.t < prev {
            return Err(Violation::NonMonotone { index });
        }
        if e.k >= num_types {
            return Err(Violation::TypeOutOfRange {
                index,
                k: e.k,
                num_types,
            });
        }
        prev = e.t;
    }
    if !(seq.horizon > 0.0) || !seq.horizon.is_finite() {
        return Err(Violation::NonPositiveHorizon);
    }
    if prev > seq.horizon {
        return Err(Violation::BeyondHorizon {
            index: seq.events.len() - 1,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<EventSequence>,
    pub num_types: usize,
    pub ground_truth: Option<Matrix>,
}

impl Dataset {
    pub fn new(sequences: Vec<EventSequence>, num_types: usize) -> Result<Self> {
        let ds = Self {
            sequences,
            num_types,
            ground_truth: None,
        };
        ds.check()?;
        Ok(ds)
    }

    pub fn with_ground_truth(mut self, truth: Matrix) -> Result<Self> {
        check_square(&truth, self.num_types)?;
        self.ground_truth = Some(truth);
        Ok(self)
    }

    pub fn check(&self) -> Result<()> {
        if self.num_types == 0 {
            return Err(Error::Config("K must be positive".into()));
        }
        for (index, s) in self.sequences.iter().enumerate() {
            validate(s, self.num_types)
                .map_err(|violation| Error::InvalidSequence { index, violation })?;
        }
        if let Some(gt) = &self.ground_truth {
            check_square(gt, self.num_types)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn num_events(&self) -> usize {
        self.sequences.iter().map(EventSequence::len).sum()
    }

    /// Per-type event totals.
    pub fn type_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_types];
        for e in self.sequences.iter().flat_map(|s| &s.events) {
            counts[e.k] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            num_types: self.num_types,
            ground_truth: self.ground_truth.clone(),
        }
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        Self::read_jsonl(reader)
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let num_types = loop {
            match lines.next() {
                None => {
                    return Err(Error::Parse {
                        line: 1,
                        msg: "missing header line {\"K\": ...}".into(),
                    })
                }
                Some((i, line)) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let h: Header = serde_json::from_str(&line).map_err(|e| Error::Parse {
                        line: i + 1,
                        msg: format!("bad header: {e}"),
                    })?;
                    break h.k;
                }
            }
        };
        let mut sequences = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SeqLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            sequences.push(EventSequence::from_pairs(&rec.seq, rec.horizon));
        }
        Dataset::new(sequences, num_types)
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        serde_json::to_writer(&mut w, &Header { k: self.num_types })?;
        writeln!(w)?;
        for s in &self.sequences {
            let rec = SeqLine {
                seq: s.events.iter().map(|e| (e.t, e.k)).collect(),
                horizon: s.horizon,
            };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(rename = "K")]
    k: usize,
}

#[derive(Serialize, Deserialize)]
struct SeqLine {
    seq: Vec<(f64, usize)>,
    #[serde(rename = "T")]
    horizon: f64,
}

fn check_square(m: &Matrix, k: usize) -> Result<()> {
    if m.len() != k || m.iter().any(|r| r.len() != k) {
        return Err(Error::Config(format!("matrix must be {k}x{k}")));
    }
    Ok(())
}

/// Writes a matrix as CSV, one row per line (row = effect, column = cause).
pub fn write_matrix_csv(m: &Matrix, mut w: impl Write) -> Result<()> {
    for row in m {
        let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn save_matrix_csv(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix_csv(m, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        rows.push(row);
    }
    let k = rows.len();
    check_square(&rows, k)?;
    Ok(rows)
}

/// Padded group of sequences. Timestamps are padded with each sequence's
/// last timestamp (so elapsed time at padding is zero) and types with the
/// sentinel `K`, which maps to the zero embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub num_types: usize,
    pub max_len: usize,
    /// `rows x max_len`, row-major.
    pub times: Vec<f64>,
    /// `rows x max_len`, row-major; `num_types` at padded positions.
    pub types: Vec<usize>,
    pub lengths: Vec<usize>,
    pub horizons: Vec<f64>,
}

impl Batch {
    pub fn from_sequences(seqs: &[&EventSequence], indices: Vec<usize>, num_types: usize) -> Self {
        let max_len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let rows = seqs.len();
        let mut times = Vec::with_capacity(rows * max_len);
        let mut types = Vec::with_capacity(rows * max_len);
        for s in seqs {
            let pad_t = s.last_time();
            for j in 0..max_len {
                match s.events.get(j) {
                    Some(e) => {
                        times.push(e.t);
                        types.push(e.k);
                    }
                    None => {
                        times.push(pad_t);
                        types.push(num_types);
                    }
                }
            }
        }
        Self {
            indices,
            num_types,
            max_len,
            times,
            types,
            lengths: seqs.iter().map(|s| s.len()).collect(),
            horizons: seqs.iter().map(|s| s.horizon).collect(),
        }
    }

    pub fn from_dataset(ds: &Dataset, indices: &[usize]) -> Self {
        let seqs: Vec<&EventSequence> = indices.iter().map(|&i| &ds.sequences[i]).collect();
        Self::from_sequences(&seqs, indices.to_vec(), ds.num_types)
    }

    pub fn rows(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_real(&self, row: usize, pos: usize) -> bool {
        pos < self.lengths[row]
    }

    pub fn time(&self, row: usize, pos: usize) -> f64 {
        self.times[row * self.max_len + pos]
    }

    pub fn kind(&self, row: usize, pos: usize) -> usize {
        self.types[row * self.max_len + pos]
    }

    pub fn num_events(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Reads row `row` back through its length mask.
    pub fn sequence(&self, row: usize) -> EventSequence {
        let events = (0..self.lengths[row])
            .map(|j| Event::new(self.time(row, j), self.kind(row, j)))
            .collect();
        EventSequence::new(events, self.horizons[row])
    }
}

/// Groups sequences of similar length: indices are shuffled, stably sorted by
/// length, cut into runs of `batch_size`, and the runs are shuffled.
pub fn bucket_batches<R: Rng + ?Sized>(ds: &Dataset, batch_size: usize, rng: &mut R) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| ds.sequences[i].len());
    let mut groups: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    groups.shuffle(rng);
    groups.into_iter().map(|g| Batch::from_dataset(ds, &g)).collect()
}

/// Consecutive batches in index order, without shuffling or bucketing.
pub fn sequential_batches(ds: &Dataset, batch_size: usize) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let idx: Vec<usize> = (0..ds.len()).collect();
    idx.chunks(batch_size).map(|g| Batch::from_dataset(ds, g)).collect()
}

/// K-fold partition of `0..n`: returns `(train, test)` index lists, each sorted.
pub fn kfold_split<R: Rng + ?Sized>(
    n: usize,
    folds: usize,
    rng: &mut R,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if folds < 2 {
        return Err(Error::Precondition(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::Precondition(format!(
            "{n} sequences cannot be split into {folds} folds"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        let mut test = perm[start..start + size].to_vec();
        let mut train: Vec<usize> = perm[..start].iter().chain(&perm[start + size..]).copied().collect();
        test.sort_unstable();
        train.sort_unstable();
        out.push((train, test));
        start += size;
    }
    Ok(out)
}

/// Random `(kept, held_out)` split with `round(frac * n)` held out (at least
/// one when `n >= 2` and `frac > 0`).
pub fn holdout_split<R: Rng + ?Sized>(n: usize, frac: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut held = (frac * n as f64).round() as usize;
    if frac > 0.0 && n >= 2 {
        held = held.clamp(1, n - 1);
    }
    let mut out = perm[..held].to_vec();
    let mut kept = perm[held..].to_vec();
    out.sort_unstable();
    kept.sort_unstable();
    (kept, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(pairs: &[(f64, usize)], t: f64) -> EventSequence {
        EventSequence::from_pairs(pairs, t)
    }

    #[test]
    fn validate_examples() {
        assert_eq!(validate(&seq(&[(1.0, 0), (2.0, 1)], 3.0), 2), Ok(()));
        let e = validate(&seq(&[(2.0, 0), (1.0, 1)], 3.0), 2).unwrap_err();
        assert!(e.to_string().contains("non-monotone timestamps"));
        let e = validate(&seq(&[(1.0, 5)], 3.0), 2).unwrap_err();
        assert!(e.to_string().contains("type out of range"));
    }

    #[test]
    fn validate_horizon_rules() {
        assert_eq!(
            validate(&seq(&[(4.0, 0)], 3.0), 1),
            Err(Violation::BeyondHorizon { index: 0 })
        );
        assert_eq!(validate(&seq(&[], 0.0), 1), Err(Violation::NonPositiveHorizon));
        assert_eq!(
            validate(&seq(&[(-1.0, 0)], 3.0), 1),
            Err(Violation::NegativeTime { index: 0 })
        );
        // ties are allowed
        assert_eq!(validate(&seq(&[(1.0, 0), (1.0, 0)], 3.0), 1), Ok(()));
    }

    #[test]
    fn jsonl_round_trip() {
        let ds = Dataset::new(
            vec![
                seq(&[(0.1, 0), (1.0 / 3.0, 1), (2.718281828459045, 0)], 3.0),
                seq(&[(1e-300, 1)], 7.25),
            ],
            2,
        )
        .unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let back = Dataset::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn header_only_is_empty_dataset() {
        let ds = Dataset::read_jsonl(&b"{\"K\": 4}\n"[..]).unwrap();
        assert_eq!(ds.len(), 0);
        assert_eq!(ds.num_types, 4);
    }

    #[test]
    fn malformed_line_is_reported_by_number() {
        let text = "{\"K\": 2}\n{\"seq\": [[1.0, 0]], \"T\": 2.0}\n{\"seq\": [[1.0, 0], \"T\": 2.0}\n";
        match Dataset::read_jsonl(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_sequence_is_reported_by_index() {
        let text = "{\"K\": 2}\n{\"seq\": [[1.0, 0]], \"T\": 2.0}\n{\"seq\": [[1.0, 3]], \"T\": 2.0}\n";
        match Dataset::read_jsonl(text.as_bytes()) {
            Err(Error::InvalidSequence { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected invalid sequence, got {other:?}"),
        }
    }

    fn dataset_with_lengths(lengths: &[usize]) -> Dataset {
        let seqs = lengths
            .iter()
            .map(|&n| {
                let pairs: Vec<(f64, usize)> = (0..n).map(|j| (j as f64 + 1.0, j % 2)).collect();
                seq(&pairs, n as f64 + 1.0)
            })
            .collect();
        Dataset::new(seqs, 2).unwrap()
    }

    #[test]
    fn bucketing_pairs_similar_lengths() {
        let ds = dataset_with_lengths(&[100, 10, 101, 11]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batches = bucket_batches(&ds, 2, &mut rng);
        let mut groups: Vec<Vec<usize>> = batches
            .iter()
            .map(|b| {
                let mut l = b.lengths.clone();
                l.sort();
                l
            })
            .collect();
        groups.sort();
        assert_eq!(groups, vec![vec![10, 11], vec![100, 101]]);
    }

    #[test]
    fn bucketing_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = bucket_batches(&dataset_with_lengths(&[5]), 8, &mut rng);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].rows(), 1);

        let ds = dataset_with_lengths(&[7; 100]);
        let batches = bucket_batches(&ds, 16, &mut rng);
        let mut sizes: Vec<usize> = batches.iter().map(Batch::rows).collect();
        sizes.sort();
        assert_eq!(sizes, vec![4, 16, 16, 16, 16, 16, 16]);
    }

    #[test]
    fn padding_uses_last_time_and_sentinel() {
        let ds = Dataset::new(vec![seq(&[(1.0, 0), (2.0, 1)], 3.0), seq(&[], 1.0)], 2).unwrap();
        let b = Batch::from_dataset(&ds, &[0, 1]);
        assert_eq!(b.max_len, 2);
        assert_eq!(b.times, vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(b.types, vec![0, 1, 2, 2]);
        assert_eq!(b.sequence(0), ds.sequences[0]);
        assert_eq!(b.sequence(1), ds.sequences[1]);
    }

    #[test]
    fn kfold_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let folds = kfold_split(10, 5, &mut rng).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.iter().flat_map(|(_, t)| t.clone()).collect();
        assert!(folds.iter().all(|(tr, t)| t.len() == 2 && tr.len() == 8));
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let loo = kfold_split(5, 5, &mut rng).unwrap();
        assert!(loo.iter().all(|(_, t)| t.len() == 1));

        assert!(kfold_split(3, 5, &mut rng).is_err());
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = vec![vec![0.1, -2.0], vec![1.0 / 3.0, 0.0]];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        save_matrix_csv(&m, &p).unwrap();
        assert_eq!(load_matrix_csv(&p).unwrap(), m);
    }
}
