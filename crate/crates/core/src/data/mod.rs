//! Event sequences and the quantities models consume from them.
//!
//! A [`Sequence`] holds strictly time-ordered [`Event`]s; a [`Dataset`]
//! groups sequences under one mark vocabulary. [`compute_deltas`] turns a
//! sequence into inter-arrival times and inter-event distances, which are
//! the only region-independent features the models see.

mod io;
mod split;
mod synth;

pub use io::{parse_dataset, write_dataset, Format};
pub use split::{delete_events, split_dataset};
pub use synth::{MarkRule, SpatialConfig, SyntheticConfig};

use crate::{Error, Result};

/// One event: a mark index, a timestamp and an optional planar location.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub mark: usize,
    pub time: f64,
    pub location: Option<[f64; 2]>,
    /// Set on events inserted by imputation.
    pub imputed: bool,
}

impl Event {
    pub fn new(mark: usize, time: f64) -> Self {
        Self { mark, time, location: None, imputed: false }
    }

    pub fn with_location(mark: usize, time: f64, location: [f64; 2]) -> Self {
        Self { mark, time, location: Some(location), imputed: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub events: Vec<Event>,
    pub region: Option<String>,
}

impl Sequence {
    /// Builds a sequence, checking the ordering and location invariants.
    pub fn new(id: impl Into<String>, events: Vec<Event>) -> Result<Self> {
        let seq = Self { id: id.into(), events, region: None };
        seq.validate()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn has_locations(&self) -> bool {
        self.events.first().is_some_and(|e| e.location.is_some())
    }

    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.time).collect()
    }

    /// The first `k` events as a new sequence with the same id.
    pub fn prefix(&self, k: usize) -> Sequence {
        Sequence { id: self.id.clone(), events: self.events[..k].to_vec(), region: self.region.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let malformed = |index: usize, reason: String| Error::MalformedSequence {
            seq: self.id.clone(),
            index,
            reason,
        };
        if self.events.is_empty() {
            return Err(malformed(0, "sequence is empty".into()));
        }
        let spatial = self.events[0].location.is_some();
        for (i, e) in self.events.iter().enumerate() {
            if !(e.time.is_finite() && e.time >= 0.0) {
                return Err(malformed(i, format!("time {} is negative or non-finite", e.time)));
            }
            if e.location.is_some() != spatial {
                return Err(malformed(i, "locations must be present on all events or none".into()));
            }
            if let Some([x, y]) = e.location {
                if !(x.is_finite() && y.is_finite()) {
                    return Err(malformed(i, "non-finite location".into()));
                }
            }
            if i > 0 && !(self.events[i - 1].time < e.time) {
                return Err(malformed(
                    i,
                    format!("time {} does not exceed previous time {}", e.time, self.events[i - 1].time),
                ));
            }
        }
        Ok(())
    }
}

/// Sequences sharing a mark vocabulary.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub sequences: Vec<Sequence>,
    /// Mark names; a mark index is a position in this list.
    pub vocab: Vec<String>,
    pub has_locations: bool,
}

impl Dataset {
    pub fn new(sequences: Vec<Sequence>, vocab: Vec<String>) -> Result<Self> {
        let has_locations = sequences.first().is_some_and(|s| s.has_locations());
        let ds = Self { sequences, vocab, has_locations };
        ds.validate()?;
        Ok(ds)
    }

    /// Vocabulary `m0 .. m{n-1}`.
    pub fn numbered_vocab(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("m{i}")).collect()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn num_marks(&self) -> usize {
        self.vocab.len()
    }

    pub fn num_events(&self) -> usize {
        self.sequences.iter().map(Sequence::len).sum()
    }

    /// Same vocabulary, different sequences.
    pub fn with_sequences(&self, sequences: Vec<Sequence>) -> Dataset {
        Dataset { sequences, vocab: self.vocab.clone(), has_locations: self.has_locations }
    }

    /// Re-indexes marks against `vocab` by name. Marks absent from `vocab`
    /// are an error; `vocab` may hold names the data never uses.
    pub fn remap_vocab(&self, vocab: &[String]) -> Result<Dataset> {
        let index: std::collections::HashMap<&str, usize> =
            vocab.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
        let mut map = Vec::with_capacity(self.vocab.len());
        for name in &self.vocab {
            match index.get(name.as_str()) {
                Some(&i) => map.push(i),
                None => return Err(Error::VocabMismatch(format!("mark `{name}` is not in the model vocabulary"))),
            }
        }
        let sequences = self
            .sequences
            .iter()
            .map(|s| Sequence {
                events: s.events.iter().map(|e| Event { mark: map[e.mark], ..e.clone() }).collect(),
                ..s.clone()
            })
            .collect();
        Ok(Dataset { sequences, vocab: vocab.to_vec(), has_locations: self.has_locations })
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.sequences {
            s.validate()?;
            if s.has_locations() != self.has_locations {
                return Err(Error::MalformedSequence {
                    seq: s.id.clone(),
                    index: 0,
                    reason: "location presence differs from the rest of the dataset".into(),
                });
            }
            if let Some((i, e)) = s.events.iter().enumerate().find(|(_, e)| e.mark >= self.vocab.len()) {
                return Err(Error::MalformedSequence {
                    seq: s.id.clone(),
                    index: i,
                    reason: format!("mark {} outside vocabulary of size {}", e.mark, self.vocab.len()),
                });
            }
        }
        Ok(())
    }

    /// Median of all observed inter-arrival times (excluding each sequence's
    /// first event). `None` when no sequence has two events.
    pub fn median_gap(&self) -> Option<f64> {
        let mut gaps: Vec<f64> = self
            .sequences
            .iter()
            .flat_map(|s| s.events.windows(2).map(|w| w[1].time - w[0].time))
            .collect();
        if gaps.is_empty() {
            return None;
        }
        gaps.sort_by(f64::total_cmp);
        let n = gaps.len();
        Some(if n % 2 == 1 { gaps[n / 2] } else { 0.5 * (gaps[n / 2 - 1] + gaps[n / 2]) })
    }
}

/// Per-event inter-arrival times and distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaView {
    /// `dt[k] = t_k - t_{k-1}` with `t_{-1} := 0`.
    pub dt: Vec<f64>,
    /// Euclidean distance to the previous location, `0` for the first event.
    pub dd: Option<Vec<f64>>,
}

impl DeltaView {
    pub fn len(&self) -> usize {
        self.dt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dt.is_empty()
    }

    pub fn dd_at(&self, k: usize) -> Option<f64> {
        self.dd.as_ref().map(|d| d[k])
    }
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn compute_deltas(seq: &Sequence) -> Result<DeltaView> {
    seq.validate()?;
    let mut dt = Vec::with_capacity(seq.len());
    let mut prev = 0.0;
    for (i, e) in seq.events.iter().enumerate() {
        let d = e.time - prev;
        if !(d > 0.0) {
            return Err(Error::MalformedSequence {
                seq: seq.id.clone(),
                index: i,
                reason: format!("non-positive inter-arrival time {d}"),
            });
        }
        dt.push(d);
        prev = e.time;
    }
    let dd = seq.has_locations().then(|| {
        let mut out = vec![0.0];
        out.extend(
            seq.events
                .windows(2)
                .map(|w| distance(w[0].location.unwrap(), w[1].location.unwrap())),
        );
        out
    });
    Ok(DeltaView { dt, dd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(times: &[f64]) -> Sequence {
        Sequence::new("s", times.iter().map(|&t| Event::new(0, t)).collect()).unwrap()
    }

    #[test]
    fn inter_arrival_times_use_zero_origin() {
        let d = compute_deltas(&seq(&[0.5, 2.0, 3.0])).unwrap();
        assert_eq!(d.dt, vec![0.5, 1.5, 1.0]);
        assert!(d.dd.is_none());
    }

    #[test]
    fn distances_between_locations() {
        let s = Sequence::new(
            "s",
            vec![Event::with_location(0, 1.0, [0.0, 0.0]), Event::with_location(0, 2.0, [0.0, 0.0])],
        )
        .unwrap();
        assert_eq!(compute_deltas(&s).unwrap().dd, Some(vec![0.0, 0.0]));
        let s = Sequence::new(
            "s",
            vec![Event::with_location(0, 1.0, [0.0, 0.0]), Event::with_location(0, 2.0, [3.0, 4.0])],
        )
        .unwrap();
        assert_eq!(compute_deltas(&s).unwrap().dd, Some(vec![0.0, 5.0]));
    }

    #[test]
    fn non_monotone_times_name_the_index() {
        let s = Sequence {
            id: "bad".into(),
            events: vec![Event::new(0, 1.0), Event::new(0, 2.0), Event::new(0, 1.5)],
            region: None,
        };
        match compute_deltas(&s) {
            Err(Error::MalformedSequence { seq, index, .. }) => {
                assert_eq!(seq, "bad");
                assert_eq!(index, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn event_at_origin_is_rejected_by_deltas() {
        let s = seq(&[0.0, 1.0]);
        assert!(compute_deltas(&s).is_err());
    }

    #[test]
    fn remap_follows_names() {
        let s = Sequence::new("s", vec![Event::new(0, 1.0), Event::new(1, 2.0)]).unwrap();
        let ds = Dataset::new(vec![s], vec!["b".into(), "a".into()]).unwrap();
        let r = ds.remap_vocab(&["a".into(), "b".into(), "c".into()]).unwrap();
        assert_eq!(r.sequences[0].events.iter().map(|e| e.mark).collect::<Vec<_>>(), vec![1, 0]);
        assert!(matches!(ds.remap_vocab(&["a".into()]), Err(Error::VocabMismatch(_))));
    }

    #[test]
    fn mixed_location_presence_is_rejected() {
        let events = vec![Event::with_location(0, 1.0, [0.0, 0.0]), Event::new(0, 2.0)];
        assert!(Sequence::new("s", events).is_err());
    }

    proptest! {
        #[test]
        fn cumulative_dt_reconstructs_times(gaps in prop::collection::vec(1e-3f64..100.0, 1..50)) {
            let mut t = 0.0;
            let times: Vec<f64> = gaps.iter().map(|g| { t += g; t }).collect();
            let d = compute_deltas(&seq(&times)).unwrap();
            let mut acc = 0.0;
            for (k, dt) in d.dt.iter().enumerate() {
                acc += dt;
                prop_assert!((acc - times[k]).abs() <= 1e-9 * times[k].abs());
            }
        }
    }
}
