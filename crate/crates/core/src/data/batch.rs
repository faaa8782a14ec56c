use super::{DomainDataset, SegSample};
use crate::numerics::Rng;

/// One optimisation step's worth of samples. `target` is empty in
/// domain-generalization mode.
#[derive(Clone, Debug)]
pub struct MiniBatch<'a> {
    pub source: Vec<&'a SegSample>,
    pub target: Vec<&'a SegSample>,
}

/// Epoch-wise shuffling where the batch for step `s` is a pure function of
/// `(seed, s)`, so a resumed run draws the same batches.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    rng: Rng,
    batch: usize,
}

impl BatchSampler {
    pub fn new(rng: Rng, batch: usize) -> Self {
        Self { rng, batch }
    }

    pub fn indices(&self, len: usize, step: u64) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        let mut cached: Option<(u64, Vec<usize>)> = None;
        for k in 0..self.batch as u64 {
            let pos = step * self.batch as u64 + k;
            let epoch = pos / len as u64;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                cached = Some((epoch, self.rng.fork(epoch).permutation(len)));
            }
            let perm = &cached.as_ref().unwrap().1;
            out.push(perm[(pos % len as u64) as usize]);
        }
        out
    }

    pub fn draw<'a>(&self, ds: &'a DomainDataset, step: u64) -> Vec<&'a SegSample> {
        self.indices(ds.len(), step).into_iter().map(|i| &ds.samples[i]).collect()
    }
}
