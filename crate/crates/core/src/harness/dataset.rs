//! Dataset generation and persistence.
//!
//! On disk a dataset is a single JSON header line followed by raw
//! little-endian `f64` blocks, one fixed-size record per sample: the channel
//! entries (interleaved re/im), the cached initialization vector, and the
//! cached beamformer rows. The binary body keeps reloads bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fbl::{self, Beamformers, CMat, Geometry, Realization, SystemParams, C64};
use crate::learn::TrainSample;
use crate::proj::{C1Spec, OptVector, BLOCKS};
use crate::unroll::init_x0_w0;
use crate::{Error, Result};

pub const DATASET_VERSION: u32 = 1;

/// Everything needed to regenerate the samples bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub sys: SystemParams,
    pub geo: Geometry,
    pub seed: u64,
    pub count: usize,
}

/// One stored sample: the realization plus its cached initialization.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub real: Realization,
    pub x0: OptVector,
    pub w0: Beamformers,
}

/// A generated dataset with cached initializations.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

/// SplitMix64 step, used to derive per-sample seeds from the header seed.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Dataset {
    /// Generates `count` seeded samples with cached initializations.
    pub fn generate(sys: &SystemParams, geo: &Geometry, seed: u64, count: usize) -> Result<Self> {
        sys.validate()?;
        geo.validate()?;
        let mut state = seed;
        let samples = (0..count)
            .map(|_| {
                let sample_seed = splitmix64(&mut state);
                let real = fbl::channel_gen(sample_seed, sys, geo)?;
                let spec = C1Spec::from_realization(&real)?;
                let (x0, w0) = init_x0_w0(&real, &spec)?;
                Ok(Sample { real, x0, w0 })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            header: DatasetHeader {
                version: DATASET_VERSION,
                sys: sys.clone(),
                geo: geo.clone(),
                seed,
                count,
            },
            samples,
        })
    }

    /// Training view of the samples (projection constants recomputed).
    pub fn train_samples(&self) -> Result<Vec<TrainSample>> {
        self.samples
            .iter()
            .map(|s| {
                Ok(TrainSample {
                    real: s.real.clone(),
                    spec: C1Spec::from_realization(&s.real)?,
                    x: s.x0.clone(),
                    w: s.w0.clone(),
                })
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        let header = serde_json::to_string(&self.header)?;
        file.write_all(header.as_bytes())?;
        file.write_all(b"\n")?;
        let mut body: Vec<u8> = Vec::new();
        for s in &self.samples {
            for c in s.real.h.data() {
                body.extend_from_slice(&c.re.to_le_bytes());
                body.extend_from_slice(&c.im.to_le_bytes());
            }
            for &v in s.x0.as_slice() {
                body.extend_from_slice(&v.to_le_bytes());
            }
            for c in s.w0.w.data() {
                body.extend_from_slice(&c.re.to_le_bytes());
                body.extend_from_slice(&c.im.to_le_bytes());
            }
        }
        file.write_all(&body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)?;
        let mut raw = Vec::new();
        file.read_to_end(&mut raw)?;
        let newline = raw
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Io("dataset missing header line".into()))?;
        let header: DatasetHeader = serde_json::from_slice(&raw[..newline])?;
        if header.version != DATASET_VERSION {
            return Err(Error::Io(format!(
                "dataset version {} unsupported (expected {DATASET_VERSION})",
                header.version
            )));
        }
        header.sys.validate()?;
        header.geo.validate()?;

        let (k, n_t) = (header.sys.k, header.sys.n_t);
        let record = 2 * k * n_t + BLOCKS * k + 2 * k * n_t;
        let body = &raw[newline + 1..];
        if body.len() != header.count * record * 8 {
            return Err(Error::Io(format!(
                "dataset body has {} bytes, expected {}",
                body.len(),
                header.count * record * 8
            )));
        }

        let mut floats = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
        let mut next = || floats.next().expect("length checked above");

        // Per-sample seeds re-derived from the header seed, matching generate().
        let mut state = header.seed;
        let mut samples = Vec::with_capacity(header.count);
        for _ in 0..header.count {
            let sample_seed = splitmix64(&mut state);
            let mut h = Vec::with_capacity(k * n_t);
            for _ in 0..k * n_t {
                let re = next();
                let im = next();
                h.push(C64::new(re, im));
            }
            let x0: Vec<f64> = (0..BLOCKS * k).map(|_| next()).collect();
            let mut w = Vec::with_capacity(k * n_t);
            for _ in 0..k * n_t {
                let re = next();
                let im = next();
                w.push(C64::new(re, im));
            }
            samples.push(Sample {
                real: Realization {
                    h: CMat::new(k, n_t, h)?,
                    sys: header.sys.clone(),
                    seed: sample_seed,
                },
                x0: OptVector::from_vec(k, x0)?,
                w0: Beamformers {
                    w: CMat::new(k, n_t, w)?,
                },
            });
        }
        Ok(Dataset { header, samples })
    }
}
