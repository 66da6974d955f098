//! Flat `key = value` run configuration with flag overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use voxelgate_core::metrics::TverskyWeights;
use voxelgate_core::phantom::PhantomSpec;
use voxelgate_core::unet::Activation;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::trainer::TrainConfig;

/// Every accepted key with its default; `None` means unset.
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("raw_dir", None),
    ("data_dir", None),
    ("out_dir", None),
    ("model_dir", None),
    ("phantom_n", Some("8")),
    ("phantom_extent", Some("32")),
    ("phantom_seed", Some("0")),
    ("phantom_radius", None),
    ("phantom_noise", Some("0.02")),
    ("split_seed", Some("0")),
    ("depth", Some("2")),
    ("base_filters", Some("8")),
    ("activation", Some("leaky_relu")),
    ("learning_rate", Some("0.0001")),
    ("batch_size", Some("2")),
    ("epochs", Some("127")),
    ("seed", Some("0")),
    ("prior_init", Some("true")),
    ("tversky_alpha", Some("0.7")),
    ("tversky_beta", Some("0.3")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for CliConfig {
    fn default() -> Self {
        let values = KEYS.iter().filter_map(|&(k, d)| d.map(|d| (k, d.to_string()))).collect();
        Self { values }
    }
}

impl CliConfig {
    /// Defaults overlaid with the `key = value` lines of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", i + 1)))?;
            c.set(k.trim(), v.trim()).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fsutil::read_to_string(path)?).map_err(|e| e.in_file(path))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let &(k, _) = KEYS
            .iter()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        self.values.insert(k, value.to_string());
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for p in pairs {
            let (k, v) = p.split_once('=').ok_or_else(|| Error::Config(format!("override {p:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key).ok_or_else(|| Error::Config(format!("{key} is not set")))?;
        v.parse().map_err(|_| Error::Config(format!("invalid value for {key}: {v:?}")))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.get(key)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config(format!("{key} is not set (pass the flag or put it in the config file)")))
    }

    pub fn split_seed(&self) -> Result<u64> {
        self.parsed("split_seed")
    }

    pub fn phantom_count(&self) -> Result<usize> {
        self.parsed("phantom_n")
    }

    pub fn phantom_spec(&self) -> Result<PhantomSpec> {
        let mut spec = PhantomSpec::for_extent(self.parsed("phantom_extent")?, self.parsed("phantom_seed")?);
        if self.get("phantom_radius").is_some() {
            spec = spec.with_radius(self.parsed("phantom_radius")?);
        }
        spec.noise = self.parsed("phantom_noise")?;
        Ok(spec)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let act: String = self.parsed("activation")?;
        let c = TrainConfig {
            learning_rate: self.parsed("learning_rate")?,
            batch_size: self.parsed("batch_size")?,
            epochs: self.parsed("epochs")?,
            seed: self.parsed("seed")?,
            activation: Activation::parse(&act).ok_or_else(|| Error::Config(format!("unknown activation {act:?}")))?,
            depth: self.parsed("depth")?,
            base_filters: self.parsed("base_filters")?,
            tversky: TverskyWeights::new(self.parsed("tversky_alpha")?, self.parsed("tversky_beta")?)
                .map_err(|e| Error::Config(e.to_string()))?,
            prior_init: self.parsed("prior_init")?,
        };
        c.validate()?;
        Ok(c)
    }

    /// Fully resolved configuration in file syntax.
    pub fn render(&self) -> String {
        KEYS.iter()
            .map(|&(k, _)| match self.get(k) {
                Some(v) => format!("{k} = {v}\n"),
                None => format!("# {k} unset\n"),
            })
            .collect()
    }
}
