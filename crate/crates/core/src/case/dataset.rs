use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CaseError, GridCase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        })
    }
}

impl FromStr for SplitTag {
    type Err = CaseError;
    fn from_str(s: &str) -> Result<Self, CaseError> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            _ => Err(CaseError::Dataset(format!("unknown split `{s}`"))),
        }
    }
}

/// One load snapshot, `pd = alpha .* base_demand` in per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadScenario {
    pub id: usize,
    pub alpha: Vec<f64>,
    pub pd: Vec<f64>,
    #[serde(skip, default = "feasible_default")]
    pub opf_feasible: bool,
    pub split: Option<SplitTag>,
}

fn feasible_default() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub case_id: String,
    pub seed: u64,
    pub scenarios: Vec<LoadScenario>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn with_tag(&self, tag: SplitTag) -> impl Iterator<Item = &LoadScenario> {
        self.scenarios.iter().filter(move |s| s.split == Some(tag))
    }

    /// Scenarios carrying `tag`, or every scenario if none are tagged.
    pub fn tagged_or_all(&self, tag: SplitTag) -> Vec<&LoadScenario> {
        if self.scenarios.iter().all(|s| s.split.is_none()) {
            self.scenarios.iter().collect()
        } else {
            self.with_tag(tag).collect()
        }
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<(), CaseError> {
        for s in &self.scenarios {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl(input: impl BufRead, case_id: &str) -> Result<Self, CaseError> {
        let mut scenarios = Vec::new();
        for (k, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: LoadScenario = serde_json::from_str(&line).map_err(|e| CaseError::Parse {
                line: k + 1,
                msg: e.to_string(),
            })?;
            if s.alpha.len() != s.pd.len() {
                return Err(CaseError::Parse {
                    line: k + 1,
                    msg: "alpha and pd lengths differ".into(),
                });
            }
            scenarios.push(s);
        }
        Ok(Dataset {
            case_id: case_id.to_string(),
            seed: 0,
            scenarios,
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, CaseError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::read_jsonl(std::io::BufReader::new(file), &id)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), CaseError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Checks that every scenario matches `case` in dimension.
    pub fn check_against(&self, case: &GridCase) -> Result<(), CaseError> {
        match self.scenarios.iter().find(|s| s.pd.len() != case.n_bus()) {
            Some(s) => Err(CaseError::Dataset(format!(
                "scenario {} has {} loads but case `{}` has {} buses",
                s.id,
                s.pd.len(),
                case.name,
                case.n_bus()
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    pub count: usize,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            count: 3000,
            scale_min: 1.00,
            scale_max: 1.10,
        }
    }
}

/// Rejection-samples per-bus load scalings until `count` scenarios pass the
/// `feasible` check (normally an all-lines-closed DC-OPF solve).
///
/// Gives up once `1000 * count` draws have been made.
pub fn generate_dataset(
    case: &GridCase,
    config: SamplingConfig,
    seed: u64,
    mut feasible: impl FnMut(&[f64]) -> bool,
) -> Result<Dataset, CaseError> {
    let SamplingConfig {
        count,
        scale_min,
        scale_max,
    } = config;
    if count == 0 {
        return Err(CaseError::Dataset("count must be positive".into()));
    }
    if !(scale_min <= scale_max) || !scale_min.is_finite() || !scale_max.is_finite() {
        return Err(CaseError::Dataset(format!(
            "invalid scale range [{scale_min}, {scale_max}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = case.n_bus();
    let max_draws = count.saturating_mul(1000);
    let mut scenarios = Vec::with_capacity(count);
    let mut draws = 0;
    while scenarios.len() < count {
        if draws >= max_draws {
            return Err(CaseError::SamplingFailure {
                accepted: scenarios.len(),
                draws,
                needed: count,
            });
        }
        draws += 1;
        let alpha: Vec<f64> = (0..nb)
            .map(|_| {
                if scale_min == scale_max {
                    scale_min
                } else {
                    rng.random_range(scale_min..=scale_max)
                }
            })
            .collect();
        let pd: Vec<f64> = alpha
            .iter()
            .zip(case.base_demand.iter())
            .map(|(a, d)| a * d)
            .collect();
        if feasible(&pd) {
            scenarios.push(LoadScenario {
                id: scenarios.len(),
                alpha,
                pd,
                opf_feasible: true,
                split: None,
            });
        }
    }
    log::debug!("accepted {count} of {draws} load draws");
    Ok(Dataset {
        case_id: case.name.clone(),
        seed,
        scenarios,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.5,
            val: 0.167,
            test: 0.333,
        }
    }
}

/// Tags scenarios train/val/test after a seeded shuffle.
///
/// Train and validation counts are `round(n * fraction)`; the remainder goes
/// to test. Fractions must be non-negative and sum to one within `1e-9`.
pub fn split_dataset(
    mut dataset: Dataset,
    fractions: SplitFractions,
    seed: u64,
) -> Result<Dataset, CaseError> {
    let SplitFractions { train, val, test } = fractions;
    if [train, val, test].iter().any(|f| !(*f >= 0.0)) {
        return Err(CaseError::Dataset("split fractions must be non-negative".into()));
    }
    if ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(CaseError::Dataset(format!(
            "split fractions sum to {}, expected 1",
            train + val + test
        )));
    }
    let n = dataset.len();
    let n_train = ((n as f64) * train).round() as usize;
    let n_train = n_train.min(n);
    let n_val = (((n as f64) * val).round() as usize).min(n - n_train);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for (rank, &idx) in order.iter().enumerate() {
        dataset.scenarios[idx].split = Some(if rank < n_train {
            SplitTag::Train
        } else if rank < n_train + n_val {
            SplitTag::Val
        } else {
            SplitTag::Test
        });
    }
    Ok(dataset)
}
