use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{ClipBatch, FrameNeeds, ModelConfig, InputNorm, Student, Teacher};
use crate::numcore::Tensor;
use crate::seeds::derive_seed;
use crate::simulator::{Dataset, Sequence};

/// `len` consecutive samples of sequence `seq`, starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Clip {
    pub seq: usize,
    pub start: usize,
    pub len: usize,
}

/// Training and validation sequences.
#[derive(Clone, Debug)]
pub struct TrainData<'a> {
    pub train: Vec<&'a Sequence>,
    pub val: Vec<&'a Sequence>,
}

impl<'a> TrainData<'a> {
    /// Holds out the last `val` sequences.
    pub fn split(ds: &'a Dataset, val: usize) -> Result<TrainData<'a>> {
        let n = ds.sequences.len();
        if val >= n {
            return Err(Error::config(
                &["train.val_sequences", "dataset.n_sequences"],
                format!("cannot hold out {val} of {n} sequences and still train"),
            ));
        }
        Ok(TrainData {
            train: ds.sequences[..n - val].iter().collect(),
            val: ds.sequences[n - val..].iter().collect(),
        })
    }

    pub fn all(ds: &'a Dataset) -> TrainData<'a> {
        TrainData {
            train: ds.sequences.iter().collect(),
            val: Vec::new(),
        }
    }
}

/// Tiles each sequence into full-length clips starting at a per-epoch random
/// offset, shuffles them and groups them into batches. Remainders are
/// dropped for the epoch; the offset rotates which pairs they are.
pub fn epoch_batches(lengths: &[usize], subseq_len: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<Clip>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[epoch as u64]));
    let mut clips = Vec::new();
    for (seq, &n) in lengths.iter().enumerate() {
        if n < subseq_len {
            continue;
        }
        let offset = rng.random_range(0..subseq_len.min(n - subseq_len + 1));
        let mut start = offset;
        while start + subseq_len <= n {
            clips.push(Clip {
                seq,
                start,
                len: subseq_len,
            });
            start += subseq_len;
        }
    }
    clips.shuffle(&mut rng);
    clips.chunks(batch_size).map(<[Clip]>::to_vec).collect()
}

/// Consecutive clips covering all `n` samples; the last may be shorter.
pub fn eval_clips(seq: usize, n: usize, subseq_len: usize) -> Vec<Clip> {
    (0..n)
        .step_by(subseq_len.max(1))
        .map(|start| Clip {
            seq,
            start,
            len: subseq_len.min(n - start),
        })
        .collect()
}

pub fn build_batch(seqs: &[&Sequence], clips: &[Clip], cfg: &ModelConfig, norm: &InputNorm, needs: FrameNeeds) -> Result<ClipBatch> {
    let refs: Vec<Vec<_>> = clips
        .iter()
        .map(|c| seqs[c.seq].samples[c.start..c.start + c.len].iter().collect())
        .collect();
    ClipBatch::new(&refs, cfg, norm, needs)
}

/// Per-sequence feature rows `[n_samples, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub tables: Vec<Tensor>,
}

const ENCODE_CHUNK: usize = 256;

impl FeatureTable {
    fn build(seqs: &[&Sequence], mut encode: impl FnMut(&[crate::simulator::Sample]) -> Result<Tensor>) -> Result<FeatureTable> {
        let mut tables = Vec::with_capacity(seqs.len());
        for s in seqs {
            let mut data = Vec::new();
            let mut d = 0;
            for chunk in s.samples.chunks(ENCODE_CHUNK) {
                let t = encode(chunk)?;
                d = t.shape()[1];
                data.extend_from_slice(t.data());
            }
            tables.push(Tensor::new(vec![s.samples.len(), d], data)?);
        }
        Ok(FeatureTable { tables })
    }

    pub fn visual(teacher: &Teacher, seqs: &[&Sequence]) -> Result<FeatureTable> {
        Self::build(seqs, |c| teacher.encode_visual_batch(c.iter().map(|s| &s.visual_pair)))
    }

    pub fn hallucination(student: &Student, seqs: &[&Sequence]) -> Result<FeatureTable> {
        Self::build(seqs, |c| student.encode_hallucination_batch(c.iter().map(|s| &s.thermal_pair)))
    }

    pub fn dim(&self) -> usize {
        self.tables.first().map_or(0, |t| t.shape()[1])
    }

    pub fn row(&self, seq: usize, idx: usize) -> &[f64] {
        let d = self.dim();
        &self.tables[seq].data()[idx * d..(idx + 1) * d]
    }

    /// Rows for `clips` in the step-major batch layout.
    pub fn gather(&self, clips: &[Clip]) -> Result<Tensor> {
        let steps = clips.first().map_or(0, |c| c.len);
        let d = self.dim();
        let mut data = Vec::with_capacity(steps * clips.len() * d);
        for t in 0..steps {
            for c in clips {
                data.extend_from_slice(self.row(c.seq, c.start + t));
            }
        }
        Tensor::new(vec![steps * clips.len(), d], data)
    }
}
