//! Flat key/value run configuration.
//!
//! The format is one `key = value` pair per line with `#` comments. Unknown
//! keys are rejected so typos cannot silently fall back to defaults.

use crate::fbl::{Geometry, SystemParams};
use crate::learn::TrainConfig;
use crate::{Error, Result};

/// Everything a CLI run needs: system, geometry, trainer, model shape, and
/// dataset sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub sys: SystemParams,
    pub geo: Geometry,
    pub train: TrainConfig,
    pub depth: usize,
    pub filter_order: usize,
    pub train_samples: usize,
    pub test_samples: usize,
}

impl Default for RunConfig {
    /// Desk-scale defaults: two users, four antennas, 25 dB SNR, half-rate
    /// payload over 128 symbols.
    fn default() -> Self {
        RunConfig {
            sys: SystemParams::from_snr_db(2, 4, 25.0, 128, 128.0, 1e-5)
                .expect("defaults are valid"),
            geo: Geometry {
                d0: 50.0,
                path_loss_exp: 3.0,
                d_min: 120.0,
                d_max: 140.0,
            },
            train: TrainConfig::default_with_seed(1),
            depth: 2,
            filter_order: 1,
            train_samples: 512,
            test_samples: 200,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut snr_db: Option<f64> = None;
        let mut alpha: Option<Vec<f64>> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Contract(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                Error::Contract(format!("line {}: bad {what}: {value}", lineno + 1))
            };
            match key {
                "k" => cfg.sys.k = value.parse().map_err(|_| bad("integer"))?,
                "n_t" => cfg.sys.n_t = value.parse().map_err(|_| bad("integer"))?,
                "snr_db" => snr_db = Some(value.parse().map_err(|_| bad("number"))?),
                "p_max" => cfg.sys.p_max = value.parse().map_err(|_| bad("number"))?,
                "noise_std" => cfg.sys.noise_std = value.parse().map_err(|_| bad("number"))?,
                "blocklength" => {
                    cfg.sys.blocklength = value.parse().map_err(|_| bad("integer"))?
                }
                "payload_bits" => {
                    cfg.sys.payload_bits = value.parse().map_err(|_| bad("number"))?
                }
                "err_prob" => cfg.sys.err_prob = value.parse().map_err(|_| bad("number"))?,
                "alpha" => {
                    let parsed = value
                        .split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("comma-separated numbers"))?;
                    alpha = Some(parsed);
                }
                "d0" => cfg.geo.d0 = value.parse().map_err(|_| bad("number"))?,
                "path_loss_exp" => {
                    cfg.geo.path_loss_exp = value.parse().map_err(|_| bad("number"))?
                }
                "d_min" => cfg.geo.d_min = value.parse().map_err(|_| bad("number"))?,
                "d_max" => cfg.geo.d_max = value.parse().map_err(|_| bad("number"))?,
                "lr_theta" => cfg.train.lr_theta = value.parse().map_err(|_| bad("number"))?,
                "lr_s" => cfg.train.lr_s = value.parse().map_err(|_| bad("number"))?,
                "lr_lambda" => cfg.train.lr_lambda = value.parse().map_err(|_| bad("number"))?,
                "batch" => cfg.train.batch = value.parse().map_err(|_| bad("integer"))?,
                "epochs" => cfg.train.epochs = value.parse().map_err(|_| bad("integer"))?,
                "s_init" => {
                    let parts: Vec<f64> = value
                        .split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("two comma-separated numbers"))?;
                    if parts.len() != 2 {
                        return Err(bad("two comma-separated numbers"));
                    }
                    cfg.train.s_init = [parts[0], parts[1]];
                }
                "seed" => cfg.train.seed = value.parse().map_err(|_| bad("integer"))?,
                "depth" => cfg.depth = value.parse().map_err(|_| bad("integer"))?,
                "filter_order" => cfg.filter_order = value.parse().map_err(|_| bad("integer"))?,
                "train_samples" => {
                    cfg.train_samples = value.parse().map_err(|_| bad("integer"))?
                }
                "test_samples" => cfg.test_samples = value.parse().map_err(|_| bad("integer"))?,
                other => {
                    return Err(Error::Contract(format!(
                        "line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        if let Some(db) = snr_db {
            cfg.sys.p_max = 10f64.powf(db / 10.0) * cfg.sys.noise_std * cfg.sys.noise_std;
        }
        cfg.sys.weights = match alpha {
            Some(a) => a,
            None => vec![1.0 / cfg.sys.k as f64; cfg.sys.k],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.sys.validate()?;
        self.geo.validate()?;
        self.train.validate()?;
        if self.depth == 0 || self.filter_order == 0 {
            return Err(Error::Contract("depth and filter_order must be >= 1".into()));
        }
        if self.train_samples == 0 || self.test_samples == 0 {
            return Err(Error::Contract("sample counts must be >= 1".into()));
        }
        Ok(())
    }
}
