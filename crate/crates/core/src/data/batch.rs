use rand::seq::SliceRandom;

use super::csv_load::Example;
use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::math::rng;
use crate::model::SequenceBatch;

const SPLIT_STREAM: u64 = 0x5117;
const SHUFFLE_STREAM: u64 = 0xB47C;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<u32>,
    pub length: usize,
    pub label: usize,
}

/// Counters gathered while encoding a dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EncodeStats {
    pub examples: usize,
    pub tokens: usize,
    pub unknown: usize,
    pub empty: usize,
    pub truncated: usize,
}

impl EncodeStats {
    pub fn unk_rate(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.unknown as f64 / self.tokens as f64
        }
    }
}

pub fn encode_all(examples: &[Example], vocab: &Vocab, max_len: usize) -> (Vec<EncodedExample>, EncodeStats) {
    let mut stats = EncodeStats::default();
    let encoded = examples
        .iter()
        .map(|ex| {
            let e = vocab.encode(&ex.text, max_len);
            stats.examples += 1;
            stats.tokens += e.length;
            stats.unknown += e.unknown;
            stats.empty += usize::from(e.was_empty);
            stats.truncated += usize::from(e.truncated);
            EncodedExample {
                ids: e.ids,
                length: e.length,
                label: ex.label,
            }
        })
        .collect();
    (encoded, stats)
}

/// Shuffles with `seed` and cuts at `floor(ratio * n)`.
pub fn train_val_split<T>(mut data: Vec<T>, ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if data.len() < 2 {
        return Err(Error::Data(format!("cannot split {} examples", data.len())));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::config("split_ratio", "must lie in [0, 1]"));
    }
    let mut rng = rng::stream(seed, &[SPLIT_STREAM]);
    data.shuffle(&mut rng);
    let cut = (ratio * data.len() as f64).floor() as usize;
    let val = data.split_off(cut);
    Ok((data, val))
}

/// Yields padded batches in a fixed order; the last batch may be short.
pub struct BatchIter<'a> {
    examples: &'a [EncodedExample],
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = SequenceBatch;

    fn next(&mut self) -> Option<SequenceBatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let rows = self.order[self.pos..end].iter().map(|&i| {
            let ex = &self.examples[i];
            (&ex.ids[..ex.length], ex.label)
        });
        self.pos = end;
        Some(SequenceBatch::from_sequences(rows))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for BatchIter<'_> {}

pub fn batch_iter(examples: &[EncodedExample], batch_size: usize, shuffle: bool, seed: u64) -> Result<BatchIter<'_>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if shuffle {
        order.shuffle(&mut rng::stream(seed, &[SHUFFLE_STREAM]));
    }
    Ok(BatchIter {
        examples,
        order,
        batch_size,
        pos: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn toy(n: usize) -> Vec<EncodedExample> {
        (0..n)
            .map(|i| {
                let length = 1 + i % 7;
                EncodedExample {
                    ids: (0..length).map(|k| 2 + ((i + k) % 11) as u32).collect(),
                    length,
                    label: i % 3,
                }
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_membership() {
        let (a, b) = train_val_split((0..10).collect::<Vec<_>>(), 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a2, b2) = train_val_split((0..10).collect::<Vec<_>>(), 0.8, 3).unwrap();
        assert_eq!((a.clone(), b.clone()), (a2, b2));
        let all: HashSet<i32> = a.iter().chain(&b).copied().collect();
        assert_eq!(all.len(), 10);
        let (c, _) = train_val_split((0..10).collect::<Vec<_>>(), 0.8, 4).unwrap();
        assert_ne!(a, c);
        assert!(train_val_split(vec![1], 0.8, 0).is_err());
        let (a, b) = train_val_split((0..7).collect::<Vec<_>>(), 0.8, 0).unwrap();
        assert_eq!((a.len(), b.len()), (5, 2));
    }

    #[test]
    fn batch_sizes_and_padding() {
        let data = toy(130);
        let batches: Vec<_> = batch_iter(&data, 64, true, 9).unwrap().collect();
        assert_eq!(batches.iter().map(|b| b.batch).collect::<Vec<_>>(), vec![64, 64, 2]);
        let mut seen = 0;
        for b in &batches {
            assert_eq!(b.len, b.lengths().into_iter().max().unwrap());
            for (r, row) in b.mask.chunks(b.len).enumerate() {
                let len = row.iter().filter(|&&m| m).count();
                assert!(row[..len].iter().all(|&m| m));
                let ids = &b.ids[r * b.len..(r + 1) * b.len];
                assert!(ids[..len].iter().all(|&i| i != 0));
                assert!(ids[len..].iter().all(|&i| i == 0));
            }
            seen += b.batch;
        }
        assert_eq!(seen, 130);
    }

    #[test]
    fn shuffle_is_seeded() {
        let data = toy(50);
        let a: Vec<_> = batch_iter(&data, 8, true, 1).unwrap().collect();
        let b: Vec<_> = batch_iter(&data, 8, true, 1).unwrap().collect();
        let c: Vec<_> = batch_iter(&data, 8, true, 2).unwrap().collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let plain: Vec<_> = batch_iter(&data, 8, false, 1).unwrap().collect();
        assert_eq!(plain[0].labels, vec![0, 1, 2, 0, 1, 2, 0, 1]);
        assert!(batch_iter(&data, 0, false, 0).is_err());
    }

    #[test]
    fn encoding_stats() {
        let ex = vec![
            Example { text: "a b c".into(), label: 0 },
            Example { text: "???".into(), label: 1 },
            Example { text: "".into(), label: 1 },
        ];
        let vocab = Vocab::build(["a b"], 1, 10).unwrap();
        let (enc, stats) = encode_all(&ex, &vocab, 2);
        assert_eq!(enc[0].ids.len(), 2);
        assert_eq!(stats.empty, 1);
        assert_eq!(stats.truncated, 2);
        assert!(enc.iter().flat_map(|e| &e.ids).all(|&i| (i as usize) < vocab.len()));
    }
}
