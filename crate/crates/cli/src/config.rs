//! Key-value override files: `section.key = value` lines that adjust the
//! library's config defaults. Sections are validated strictly per command,
//! so a typo fails loudly instead of being ignored.

use std::collections::BTreeSet;
use std::path::Path;

use permlabel::permnet::{NetworkConfig, TrainConfig};
use permlabel::sinkhorn::SinkhornConfig;
use permlabel::trajlabel::ScoringConfig;
use permlabel::{Error, Result};

#[derive(Debug, Default)]
pub struct Overrides {
    entries: Vec<(String, String)>,
}

pub fn load(path: &Path) -> Result<Overrides> {
    let text = std::fs::read_to_string(path)?;
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!(
                "{}: line {}: expected `section.key = value`, got {raw:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        let key = key.trim().to_string();
        if !seen.insert(key.clone()) {
            return Err(Error::Format(format!(
                "{}: line {}: key {key} given twice",
                path.display(),
                lineno + 1
            )));
        }
        entries.push((key, value.trim().to_string()));
    }
    Ok(Overrides { entries })
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::InvalidArgument(format!("config key {key}: cannot parse value {value:?}"))
    })
}

impl Overrides {
    /// Applies every entry to the configs this command supports; an entry
    /// for anything else is an error naming the supported sections.
    pub fn apply(
        &self,
        mut network: Option<&mut NetworkConfig>,
        mut train: Option<&mut TrainConfig>,
        mut scoring: Option<&mut ScoringConfig>,
        mut sinkhorn: Option<&mut SinkhornConfig>,
    ) -> Result<()> {
        let mut supported: Vec<&str> = Vec::new();
        if network.is_some() {
            supported.push("network");
        }
        if train.is_some() {
            supported.push("train");
        }
        if scoring.is_some() {
            supported.push("scoring");
        }
        if sinkhorn.is_some() {
            supported.push("sinkhorn");
        }
        for (key, value) in &self.entries {
            let known = match (key.as_str(), &mut network, &mut train, &mut scoring, &mut sinkhorn)
            {
                ("network.hidden_width", Some(n), ..) => {
                    n.hidden_width = parse(key, value)?;
                    true
                }
                ("network.n_residual_blocks", Some(n), ..) => {
                    n.n_residual_blocks = parse(key, value)?;
                    true
                }
                ("network.layers_per_block", Some(n), ..) => {
                    n.layers_per_block = parse(key, value)?;
                    true
                }
                ("network.leaky_slope", Some(n), ..) => {
                    n.leaky_slope = parse(key, value)?;
                    true
                }
                ("network.seed", Some(n), ..) => {
                    n.seed = parse(key, value)?;
                    true
                }
                ("train.batch_size", _, Some(t), ..) => {
                    t.batch_size = parse(key, value)?;
                    true
                }
                ("train.lr_initial", _, Some(t), ..) => {
                    t.lr_initial = parse(key, value)?;
                    true
                }
                ("train.lr_decay_factor", _, Some(t), ..) => {
                    t.lr_decay_factor = parse(key, value)?;
                    true
                }
                ("train.epochs", _, Some(t), ..) => {
                    t.epochs = parse(key, value)?;
                    true
                }
                ("train.adam_beta1", _, Some(t), ..) => {
                    t.adam_beta1 = parse(key, value)?;
                    true
                }
                ("train.adam_beta2", _, Some(t), ..) => {
                    t.adam_beta2 = parse(key, value)?;
                    true
                }
                ("train.adam_eps", _, Some(t), ..) => {
                    t.adam_eps = parse(key, value)?;
                    true
                }
                ("train.seed", _, Some(t), ..) => {
                    t.seed = parse(key, value)?;
                    true
                }
                ("scoring.p", _, _, Some(s), _) => {
                    s.p = parse(key, value)?;
                    true
                }
                ("scoring.q", _, _, Some(s), _) => {
                    s.q = parse(key, value)?;
                    true
                }
                ("sinkhorn.iterations", .., Some(s)) => {
                    s.iterations = parse(key, value)?;
                    true
                }
                ("sinkhorn.epsilon", .., Some(s)) => {
                    s.epsilon = parse(key, value)?;
                    true
                }
                _ => false,
            };
            if !known {
                return Err(Error::InvalidArgument(format!(
                    "config key {key} is not recognized here; this command accepts sections: {}",
                    supported.join(", ")
                )));
            }
        }
        Ok(())
    }
}
