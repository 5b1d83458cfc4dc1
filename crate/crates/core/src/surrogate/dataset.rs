use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::belief::RngStream;
use crate::cspez::mc_cspez;
use crate::error::{Error, Result};

use super::features::N_FEATURES;
use super::lhs::{Configuration, ParameterRanges};

const MAGIC: &[u8; 8] = b"CSPZDS\x00\x01";

/// Generation record written next to the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub n: usize,
    pub mc_n: usize,
    pub seed: u64,
    pub ranges: Option<ParameterRanges>,
    pub columns: Vec<String>,
}

/// Features and Monte Carlo labels, stored column-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub features: Vec<[f64; N_FEATURES]>,
    pub labels: Vec<f64>,
    pub meta: DatasetMeta,
}

pub(crate) fn column_names() -> Vec<String> {
    [
        "mu_a", "mu_R", "mu_v", "var_x", "var_y", "cov_xy", "var_psi", "var_a", "var_R", "var_v", "rel_x", "rel_y",
        "rel_psi", "v_E", "label",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Labels each configuration with a Monte Carlo estimate. Configuration `i`
/// draws from `rng.substream(i)`, so the result does not depend on `workers`.
pub fn generate_labels(
    configs: &[Configuration],
    mc_n: usize,
    rng: &RngStream,
    workers: usize,
) -> Result<TrainingSet> {
    if mc_n < 1000 {
        return Err(Error::InvalidArgument(format!("mc_n must be at least 1000, got {mc_n}")));
    }
    let label = |i: usize| -> Result<f64> {
        let c = &configs[i];
        let mut s = rng.substream(i as u64);
        Ok(mc_cspez(&c.belief, &c.evader, mc_n, &mut s)?.probability)
    };
    let workers = workers.max(1).min(configs.len().max(1));
    let labels: Vec<f64> = if workers == 1 {
        (0..configs.len()).map(label).collect::<Result<_>>()?
    } else {
        let mut out = vec![0.0; configs.len()];
        let parts: Vec<Result<Vec<(usize, f64)>>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let label = &label;
                    s.spawn(move || {
                        (w..configs.len())
                            .step_by(workers)
                            .map(|i| label(i).map(|p| (i, p)))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for part in parts {
            for (i, p) in part? {
                out[i] = p;
            }
        }
        out
    };
    Ok(TrainingSet {
        features: configs.iter().map(|c| c.features().0).collect(),
        labels,
        meta: DatasetMeta {
            n: configs.len(),
            mc_n,
            seed: rng.seed(),
            ranges: None,
            columns: column_names(),
        },
    })
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        if self.features.len() != self.labels.len() {
            return Err(Error::InvalidArgument("feature/label count mismatch".into()));
        }
        if let Some(l) = self.labels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(Error::InvalidArgument(format!("label {l} outside [0, 1]")));
        }
        Ok(())
    }

    /// Subset by index.
    pub fn select(&self, idx: &[usize]) -> TrainingSet {
        let mut meta = self.meta.clone();
        meta.n = idx.len();
        TrainingSet {
            features: idx.iter().map(|&i| self.features[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            meta,
        }
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes the binary columns to `path` and the metadata to `path.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.check()?;
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&((N_FEATURES + 1) as u32).to_le_bytes())?;
        for c in 0..N_FEATURES {
            for f in &self.features {
                w.write_all(&f[c].to_le_bytes())?;
            }
        }
        for l in &self.labels {
            w.write_all(&l.to_le_bytes())?;
        }
        w.flush()?;
        let mut meta = self.meta.clone();
        meta.n = self.len();
        fs::write(Self::sidecar_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::InvalidArgument(format!("{} is not a dataset file", path.display())));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        if cols != N_FEATURES + 1 || bytes.len() != 20 + 8 * n * cols {
            return Err(Error::InvalidArgument(format!("{}: truncated or malformed dataset", path.display())));
        }
        let val = |c: usize, i: usize| {
            let o = 20 + 8 * (c * n + i);
            f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap())
        };
        let features = (0..n)
            .map(|i| std::array::from_fn(|c| val(c, i)))
            .collect();
        let labels = (0..n).map(|i| val(N_FEATURES, i)).collect();
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(Self::sidecar_path(path))?)?;
        if meta.n != n {
            return Err(Error::InvalidArgument("sidecar count does not match the data".into()));
        }
        let ts = TrainingSet { features, labels, meta };
        ts.check()?;
        Ok(ts)
    }
}
