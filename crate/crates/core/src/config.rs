//! `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error. Recognized keys:
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `model` | `graphsage` | `graphsage` or `gat` |
//! | `layers` | 3 | GNN layers |
//! | `hidden` | 16 | hidden width |
//! | `fanouts` | `5,5,5` | per-layer fanouts, bottom layer first |
//! | `batch_size` | 256 | targets per mini-batch |
//! | `lr` | 0.1 | SGD step size |
//! | `epochs` | 1 | |
//! | `cache_fraction` | 0.25 | per-device cache capacity as a fraction of `n` |
//! | `devices` | 4 | simulated devices |
//! | `seed` | 0 | |
//! | `mode` | `split` | `split`, `data_parallel` or `single` |
//! | `workers` | 1 | worker threads; 1 runs devices sequentially |
//! | `balance_eps` | 0.05 | partition imbalance tolerance |
//! | `train_fraction` | 1.0 | share of vertices used as training targets |
//! | `graph`, `format`, `features`, `labels`, `partition`, `out` | unset | paths and graph format |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::engine::ModelKind;
use crate::error::{Error, Result};
use crate::graph::GraphFormat;
use crate::metrics::Mode;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub layers: usize,
    pub hidden: usize,
    pub fanouts: Vec<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub cache_fraction: f64,
    pub devices: usize,
    pub seed: u64,
    pub mode: Mode,
    pub workers: usize,
    pub balance_eps: f64,
    pub train_fraction: f64,
    pub graph: Option<PathBuf>,
    pub format: Option<GraphFormat>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub partition: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::GraphSage,
            layers: 3,
            hidden: 16,
            fanouts: vec![5, 5, 5],
            batch_size: 256,
            lr: 0.1,
            epochs: 1,
            cache_fraction: 0.25,
            devices: 4,
            seed: 0,
            mode: Mode::Split,
            workers: 1,
            balance_eps: 0.05,
            train_fraction: 1.0,
            graph: None,
            format: None,
            features: None,
            labels: None,
            partition: None,
            out: None,
        }
    }
}

pub const KEYS: [&str; 20] = [
    "model",
    "layers",
    "hidden",
    "fanouts",
    "batch_size",
    "lr",
    "epochs",
    "cache_fraction",
    "devices",
    "seed",
    "mode",
    "workers",
    "balance_eps",
    "train_fraction",
    "graph",
    "format",
    "features",
    "labels",
    "partition",
    "out",
];

fn message(e: Error) -> String {
    match e {
        Error::Config(m) | Error::InvalidArgument(m) => m,
        other => other.to_string(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.apply_text(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        Ok(cfg)
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value",
                    i + 1
                )));
            };
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, message(e))))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model" => self.model = value.parse()?,
            "layers" => self.layers = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "fanouts" => {
                self.fanouts = value
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "cache_fraction" => self.cache_fraction = parse(key, value)?,
            "devices" => self.devices = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mode" => self.mode = value.parse()?,
            "workers" => self.workers = parse(key, value)?,
            "balance_eps" => self.balance_eps = parse(key, value)?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "graph" => self.graph = Some(PathBuf::from(value)),
            "format" => self.format = Some(value.parse().map_err(|e| Error::Config(message(e)))?),
            "features" => self.features = Some(PathBuf::from(value)),
            "labels" => self.labels = Some(PathBuf::from(value)),
            "partition" => self.partition = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.layers == 0
            || self.hidden == 0
            || self.batch_size == 0
            || self.devices == 0
            || self.workers == 0
        {
            return fail("layers, hidden, batch_size, devices and workers must be >= 1".into());
        }
        if self.fanouts.len() != self.layers {
            return fail(format!(
                "{} fanouts given for {} layers",
                self.fanouts.len(),
                self.layers
            ));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.cache_fraction) {
            return fail(format!(
                "cache_fraction must be in [0, 1], got {}",
                self.cache_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return fail(format!(
                "train_fraction must be in [0, 1], got {}",
                self.train_fraction
            ));
        }
        if !(self.balance_eps >= 0.0 && self.balance_eps.is_finite()) {
            return fail(format!(
                "balance_eps must be >= 0, got {}",
                self.balance_eps
            ));
        }
        Ok(())
    }

    /// Text form accepted by [`RunConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let fanouts: Vec<String> = self.fanouts.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "model = {}", self.model.name());
        let _ = writeln!(s, "layers = {}", self.layers);
        let _ = writeln!(s, "hidden = {}", self.hidden);
        let _ = writeln!(s, "fanouts = {}", fanouts.join(","));
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "cache_fraction = {}", self.cache_fraction);
        let _ = writeln!(s, "devices = {}", self.devices);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "workers = {}", self.workers);
        let _ = writeln!(s, "balance_eps = {}", self.balance_eps);
        let _ = writeln!(s, "train_fraction = {}", self.train_fraction);
        let paths = [
            ("graph", &self.graph),
            ("features", &self.features),
            ("labels", &self.labels),
            ("partition", &self.partition),
            ("out", &self.out),
        ];
        for (k, v) in paths {
            if let Some(p) = v {
                let _ = writeln!(s, "{k} = {}", p.display());
            }
        }
        if let Some(f) = self.format {
            let _ = writeln!(s, "format = {}", f.name());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nmodel = gat\nfanouts = 10, 5\nlayers=2\nmode = data_parallel\nout = /tmp/x\n")
            .unwrap();
        assert_eq!(c.model, ModelKind::Gat);
        assert_eq!(c.fanouts, vec![10, 5]);
        assert_eq!(c.mode, Mode::DataParallel);
        c.validate().unwrap();
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = RunConfig::default();
        assert!(c.apply_text("colour = red").is_err());
        assert!(c.apply_text("layers").is_err());
        assert!(c.apply_text("lr = fast").is_err());
        let err = c.apply_text("\nbogus = 1").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        c.layers = 2;
        assert!(c.validate().is_err());
        let c = RunConfig {
            cache_fraction: 1.5,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
