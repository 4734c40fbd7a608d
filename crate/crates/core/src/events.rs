//! Event data model, JSONL dataset I/O and sequence-level splitting.
//!
//! A dataset file holds one sequence per line:
//!
//! ```text
//! {"seq_id":"s0","horizon":10.0,"events":[{"t":1.0,"k":0},{"t":2.5,"k":1}]}
//! ```
//!
//! The number of event types lives in a sidecar `meta.json` (`{"num_types": K}`).

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";

/// A single occurrence: an event type and the time it happened.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(rename = "t")]
    pub time: f64,
    #[serde(rename = "k")]
    pub type_id: usize,
}

impl Event {
    pub fn new(type_id: usize, time: f64) -> Self {
        Self { time, type_id }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub seq_id: String,
    pub horizon: f64,
    pub events: Vec<Event>,
}

impl EventSequence {
    /// Builds a sequence and checks its invariants against `num_types`.
    pub fn new(
        seq_id: impl Into<String>,
        events: Vec<Event>,
        horizon: f64,
        num_types: usize,
    ) -> Result<Self> {
        let seq = Self {
            seq_id: seq_id.into(),
            horizon,
            events,
        };
        seq.validate(num_types)?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn validate(&self, num_types: usize) -> Result<()> {
        let fail = |index: usize, message: String| Error::InvalidSequence {
            seq_id: self.seq_id.clone(),
            index,
            message,
        };
        if !self.horizon.is_finite() || self.horizon < 0.0 {
            return Err(fail(0, format!("invalid horizon {}", self.horizon)));
        }
        let mut prev: Option<f64> = None;
        for (i, ev) in self.events.iter().enumerate() {
            if !ev.time.is_finite() || ev.time < 0.0 {
                return Err(fail(i, format!("invalid timestamp {}", ev.time)));
            }
            if ev.type_id >= num_types {
                return Err(fail(
                    i,
                    format!("type id {} out of range for K={}", ev.type_id, num_types),
                ));
            }
            if let Some(p) = prev {
                if ev.time <= p {
                    return Err(fail(i, "non-increasing timestamps".to_string()));
                }
            }
            if ev.time > self.horizon {
                return Err(fail(
                    i,
                    format!("timestamp {} beyond horizon {}", ev.time, self.horizon),
                ));
            }
            prev = Some(ev.time);
        }
        Ok(())
    }

    /// Gaps between consecutive events, the first measured from time 0.
    pub fn inter_arrivals(&self) -> Vec<f64> {
        let mut last = 0.0;
        self.events
            .iter()
            .map(|ev| {
                let gap = ev.time - last;
                last = ev.time;
                gap
            })
            .collect()
    }

    pub fn last_time(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Valid,
    Test,
    Unsplit,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SplitTag::Train => "train",
            SplitTag::Valid => "valid",
            SplitTag::Test => "test",
            SplitTag::Unsplit => "unsplit",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_types: usize,
    pub sequences: Vec<EventSequence>,
    pub split_tag: SplitTag,
}

impl Dataset {
    pub fn new(num_types: usize, sequences: Vec<EventSequence>) -> Result<Self> {
        let data = Self {
            num_types,
            sequences,
            split_tag: SplitTag::Unsplit,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn with_tag(mut self, tag: SplitTag) -> Self {
        self.split_tag = tag;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_types == 0 {
            return Err(Error::InvalidDataset("num_types must be >= 1".into()));
        }
        let mut seen = HashSet::with_capacity(self.sequences.len());
        for seq in &self.sequences {
            seq.validate(self.num_types)?;
            if !seen.insert(seq.seq_id.as_str()) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate seq_id {}",
                    seq.seq_id
                )));
            }
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

    /// Event counts per type over the whole dataset.
    pub fn type_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_types];
        for ev in self.sequences.iter().flat_map(|s| &s.events) {
            counts[ev.type_id] += 1;
        }
        counts
    }

    /// Sum of per-sequence observation windows.
    pub fn total_horizon(&self) -> f64 {
        self.sequences.iter().map(|s| s.horizon).sum()
    }
}

/// Reads a JSONL dataset. Blank lines are skipped; line numbers in errors are 1-based.
pub fn load_jsonl(path: impl AsRef<Path>, num_types: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file), num_types)
}

pub fn read_jsonl(reader: impl BufRead, num_types: usize) -> Result<Dataset> {
    let mut sequences = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: EventSequence = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        seq.validate(num_types)?;
        sequences.push(seq);
    }
    Dataset::new(num_types, sequences)
}

pub fn save_jsonl(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_jsonl(data, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_jsonl(data: &Dataset, out: &mut impl Write) -> std::io::Result<()> {
    for seq in &data.sequences {
        serde_json::to_writer(&mut *out, seq)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub num_types: usize,
}

pub fn load_meta(dir: impl AsRef<Path>) -> Result<Meta> {
    let path = dir.as_ref().join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: Meta = serde_json::from_str(&text)?;
    if meta.num_types == 0 {
        return Err(Error::InvalidDataset("meta.json: num_types must be >= 1".into()));
    }
    Ok(meta)
}

pub fn save_meta(dir: impl AsRef<Path>, meta: Meta) -> Result<()> {
    let path = dir.as_ref().join(META_FILE);
    let text = serde_json::to_string(&meta)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Train/valid/test fractions plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    ratios: [f64; 3],
    seed: u64,
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], seed: u64) -> Result<Self> {
        if ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(Error::InvalidSplit(format!(
                "each ratio must lie in (0, 1), got {ratios:?}"
            )));
        }
        let sum: f64 = ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!(
                "ratios must sum to 1, got {sum}"
            )));
        }
        Ok(Self { ratios, seed })
    }

    /// 60/20/20.
    pub fn standard(seed: u64) -> Self {
        Self {
            ratios: [0.6, 0.2, 0.2],
            seed,
        }
    }

    pub fn ratios(&self) -> [f64; 3] {
        self.ratios
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Partition sizes for `n` sequences: floor, floor, remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The epsilon absorbs products like 0.29 * 100 = 28.999999999999996.
        let count = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
        let a = count(self.ratios[0]).min(n);
        let b = count(self.ratios[1]).min(n - a);
        (a, b, n - a - b)
    }
}

/// Shuffles whole sequences with a seeded permutation and cuts them into train/valid/test.
pub fn split_dataset(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let n = data.len();
    if n < 3 {
        return Err(Error::InvalidSplit(format!(
            "need at least 3 sequences to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let (a, b, _) = spec.sizes(n);
    let take = |idx: &[usize], tag: SplitTag| Dataset {
        num_types: data.num_types,
        sequences: idx.iter().map(|&i| data.sequences[i].clone()).collect(),
        split_tag: tag,
    };
    Ok((
        take(&order[..a], SplitTag::Train),
        take(&order[a..a + b], SplitTag::Valid),
        take(&order[a + b..], SplitTag::Test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(id: &str, times: &[f64]) -> EventSequence {
        EventSequence {
            seq_id: id.into(),
            horizon: times.last().copied().unwrap_or(0.0) + 1.0,
            events: times.iter().map(|&t| Event::new(0, t)).collect(),
        }
    }

    fn dataset(n: usize) -> Dataset {
        let seqs = (0..n).map(|i| seq(&format!("s{i}"), &[1.0, 2.0])).collect();
        Dataset::new(1, seqs).unwrap()
    }

    #[test]
    fn parses_single_line() {
        let text = r#"{"seq_id":"s0","horizon":10.0,"events":[{"t":1.0,"k":0},{"t":2.5,"k":1}]}"#;
        let data = read_jsonl(text.as_bytes(), 2).unwrap();
        assert_eq!(data.len(), 1);
        assert_eq!(data.num_events(), 2);
        assert_eq!(data.sequences[0].events[1], Event::new(1, 2.5));
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let data = read_jsonl("".as_bytes(), 3).unwrap();
        assert!(data.is_empty());
    }

    #[test]
    fn repeated_timestamp_is_rejected() {
        let text = r#"{"seq_id":"s0","horizon":10.0,"events":[{"t":2.0,"k":0},{"t":2.0,"k":1}]}"#;
        match read_jsonl(text.as_bytes(), 2) {
            Err(Error::InvalidSequence {
                seq_id,
                index,
                message,
            }) => {
                assert_eq!(seq_id, "s0");
                assert_eq!(index, 1);
                assert!(message.contains("non-increasing timestamps"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "{\"seq_id\":\"a\",\"horizon\":1.0,\"events\":[]}\n{not json}\n";
        match read_jsonl(text.as_bytes(), 1) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn type_out_of_range_and_beyond_horizon() {
        let bad_type = EventSequence {
            seq_id: "x".into(),
            horizon: 5.0,
            events: vec![Event::new(3, 1.0)],
        };
        assert!(bad_type.validate(3).is_err());
        let late = EventSequence {
            seq_id: "y".into(),
            horizon: 0.5,
            events: vec![Event::new(0, 1.0)],
        };
        assert!(late.validate(1).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let seqs = vec![seq("a", &[1.0]), seq("a", &[2.0])];
        assert!(Dataset::new(1, seqs).is_err());
    }

    #[test]
    fn inter_arrival_examples() {
        assert_eq!(seq("a", &[1.0, 2.5, 3.0]).inter_arrivals(), vec![1.0, 1.5, 0.5]);
        assert_eq!(seq("a", &[4.0]).inter_arrivals(), vec![4.0]);
        assert!(seq("a", &[]).inter_arrivals().is_empty());
    }

    #[test]
    fn split_sizes() {
        let spec = SplitSpec::standard(0);
        assert_eq!(spec.sizes(10), (6, 2, 2));
        assert_eq!(spec.sizes(5), (3, 1, 1));
        let (a, b, c) = split_dataset(&dataset(10), &spec).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
        assert_eq!(a.split_tag, SplitTag::Train);
        assert_eq!(c.split_tag, SplitTag::Test);
    }

    #[test]
    fn split_is_deterministic() {
        let data = dataset(20);
        let spec = SplitSpec::new([0.5, 0.25, 0.25], 7).unwrap();
        assert_eq!(
            split_dataset(&data, &spec).unwrap(),
            split_dataset(&data, &spec).unwrap()
        );
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(split_dataset(&dataset(2), &SplitSpec::standard(0)).is_err());
        assert!(SplitSpec::new([0.5, 0.5, 0.1], 0).is_err());
        assert!(SplitSpec::new([1.0, 0.0, 0.0], 0).is_err());
    }

    #[test]
    fn jsonl_round_trip_is_byte_stable() {
        let text = "{\"seq_id\":\"s0\",\"horizon\":10.0,\"events\":[{\"t\":0.1,\"k\":1},{\"t\":2.5,\"k\":0}]}\n\
                    {\"seq_id\":\"s1\",\"horizon\":3.0,\"events\":[]}\n";
        let data = read_jsonl(text.as_bytes(), 2).unwrap();
        let mut out = Vec::new();
        write_jsonl(&data, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    proptest! {
        #[test]
        fn jsonl_preserves_timestamps_exactly(gaps in proptest::collection::vec(1e-6f64..10.0, 1..40)) {
            let mut t = 0.0;
            let times: Vec<f64> = gaps.iter().map(|g| { t += g; t }).collect();
            let data = Dataset::new(1, vec![seq("p", &times)]).unwrap();
            let mut out = Vec::new();
            write_jsonl(&data, &mut out).unwrap();
            let back = read_jsonl(out.as_slice(), 1).unwrap();
            prop_assert_eq!(back, data);
        }

        #[test]
        fn split_is_a_partition(n in 3usize..80, seed in any::<u64>()) {
            let data = dataset(n);
            let (a, b, c) = split_dataset(&data, &SplitSpec::standard(seed)).unwrap();
            let mut ids: Vec<String> = a.sequences.iter()
                .chain(&b.sequences)
                .chain(&c.sequences)
                .map(|s| s.seq_id.clone())
                .collect();
            ids.sort();
            let mut expected: Vec<String> = data.sequences.iter().map(|s| s.seq_id.clone()).collect();
            expected.sort();
            prop_assert_eq!(ids, expected);
        }

        #[test]
        fn inter_arrivals_sum_to_last_time(gaps in proptest::collection::vec(1e-3f64..10.0, 0..50)) {
            let mut t = 0.0;
            let times: Vec<f64> = gaps.iter().map(|g| { t += g; t }).collect();
            let s = seq("p", &times);
            let total: f64 = s.inter_arrivals().iter().sum();
            prop_assert!((total - s.last_time()).abs() <= 1e-12 * s.last_time().max(1.0));
        }
    }
}
