//! Turns stored samples into model inputs: optional decimation, per-sniffer
//! standardization with statistics from the training indices only, and
//! patch tokenization.

use rayon::prelude::*;
use robofi_core::models::PreparedSample;
use robofi_core::preprocess::{downsample, normalize, patchify, NormStats, PreprocessError};
use robofi_core::{AmplitudeWindow, Sample, SnifferId};
use serde::{Deserialize, Serialize};

/// Frozen standardization statistics, one set per sniffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub rate_hz: u32,
    pub stats: [NormStats; 2],
}

fn window_at(s: &Sample, sniffer: SnifferId, rate_hz: u32) -> Result<AmplitudeWindow, PreprocessError> {
    let w = s.window(sniffer);
    if w.rate_hz() == rate_hz {
        Ok(w.clone())
    } else {
        downsample(w, rate_hz)
    }
}

impl Normalizer {
    /// Statistics over the windows of `indices`, after decimation to
    /// `rate_hz`.
    pub fn fit(samples: &[Sample], indices: &[usize], rate_hz: u32) -> Result<Self, PreprocessError> {
        let mut stats = Vec::with_capacity(2);
        for sniffer in [SnifferId::S1, SnifferId::S2] {
            let windows: Vec<AmplitudeWindow> = indices
                .iter()
                .map(|i| window_at(&samples[*i], sniffer, rate_hz))
                .collect::<Result<_, _>>()?;
            stats.push(NormStats::from_windows(windows.iter())?);
        }
        let s2 = stats.pop().expect("two sniffers");
        let s1 = stats.pop().expect("two sniffers");
        Ok(Self { rate_hz, stats: [s1, s2] })
    }

    pub fn stats(&self, sniffer: SnifferId) -> &NormStats {
        &self.stats[usize::from(sniffer.index() - 1)]
    }

    pub fn prepare_one(&self, s: &Sample, patch: usize) -> Result<PreparedSample<f32>, PreprocessError> {
        let mut sets = Vec::with_capacity(2);
        for sniffer in [SnifferId::S1, SnifferId::S2] {
            let w = window_at(s, sniffer, self.rate_hz)?;
            let w = normalize(&w, self.stats(sniffer))?;
            sets.push(patchify(&w, patch)?);
        }
        Ok(PreparedSample::new(&sets[0], &sets[1], s.meta.label))
    }

    /// Prepared inputs for `indices`, in that order.
    pub fn prepare(
        &self,
        samples: &[Sample],
        indices: &[usize],
        patch: usize,
    ) -> Result<Vec<PreparedSample<f32>>, PreprocessError> {
        indices.par_iter().map(|i| self.prepare_one(&samples[*i], patch)).collect()
    }
}
