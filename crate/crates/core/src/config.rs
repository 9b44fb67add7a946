//! Network and training configuration, read from and written to flat
//! `key = value` text. Blank lines and `#` comments are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice")]
    Duplicate(String),
    #[error("bad value for `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Input side length for encoder 1 (square images).
    pub res1: usize,
    /// Input side length for encoder 2.
    pub res2: usize,
    pub channels: [usize; 4],
    /// Blocks per encoder-1 stage. Stage 3 alternates DMW-LA and DS-GIM,
    /// starting with DMW-LA; the other stages use DMW-LA only.
    pub enc1_depths: [usize; 4],
    pub enc2_depths: [usize; 4],
    /// Window side for encoder 2 and DS-GIM.
    pub window: usize,
    /// Number of classes, which is also the number of memory clusters.
    pub classes: usize,
    /// Memory slots per cluster.
    pub memory: usize,
    /// When false every DMW-LA block runs without its memory path.
    pub use_memory: bool,
    /// Drop encoder 2 entirely (single-encoder pipeline).
    pub use_encoder2: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            res1: 64,
            res2: 64,
            channels: [16, 32, 64, 64],
            enc1_depths: [1, 1, 3, 1],
            enc2_depths: [1, 1, 1, 1],
            window: 4,
            classes: 4,
            memory: 32,
            use_memory: true,
            use_encoder2: true,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        for (name, res) in [("res1", self.res1), ("res2", self.res2)] {
            if res < 16 || res % 16 != 0 {
                return bad(format!("{name}={res} must be a positive multiple of 16"));
            }
        }
        if self.channels.iter().any(|&c| c < 4) {
            return bad("every stage needs at least 4 channels".into());
        }
        if self.enc1_depths.iter().chain(&self.enc2_depths).any(|&d| d == 0) {
            return bad("stage depths must be positive".into());
        }
        if self.window == 0 {
            return bad("window must be positive".into());
        }
        if !(2..=5).contains(&self.classes) {
            return bad(format!("classes={} outside 2..=5", self.classes));
        }
        if self.memory < 2 {
            return bad("memory needs at least 2 slots".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Random flips and 90° rotations of training samples.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 4,
            lr: 1e-4,
            weight_decay: 1e-4,
            seed: 0,
            train_samples: 200,
            test_samples: 50,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.epochs == 0 || self.batch_size == 0 || self.train_samples == 0 || self.test_samples == 0 {
            return Err(ConfigError::Invalid(
                "epochs, batch_size, train_samples and test_samples must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(ConfigError::Invalid("lr must be positive, weight_decay non-negative".into()));
        }
        Ok(())
    }
}

/// Both halves of a run configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.into(),
        msg: e.to_string(),
    })
}

fn parse_four(key: &str, v: &str) -> Result<[usize; 4], ConfigError> {
    let parts = v
        .split(',')
        .map(|p| parse_one::<usize>(key, p.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    parts.try_into().map_err(|p: Vec<usize>| ConfigError::Value {
        key: key.into(),
        msg: format!("expected 4 comma-separated values, got {}", p.len()),
    })
}

fn join(v: &[usize; 4]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses `key = value` text; keys not given keep their defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if seen.insert(k.clone(), v).is_some() {
                return Err(ConfigError::Duplicate(k));
            }
        }
        let mut cfg = Self::default();
        let (n, t) = (&mut cfg.network, &mut cfg.train);
        for (k, v) in &seen {
            let v = v.as_str();
            match k.as_str() {
                "res1" => n.res1 = parse_one(k, v)?,
                "res2" => n.res2 = parse_one(k, v)?,
                "channels" => n.channels = parse_four(k, v)?,
                "enc1_depths" => n.enc1_depths = parse_four(k, v)?,
                "enc2_depths" => n.enc2_depths = parse_four(k, v)?,
                "window" => n.window = parse_one(k, v)?,
                "classes" => n.classes = parse_one(k, v)?,
                "memory" => n.memory = parse_one(k, v)?,
                "use_memory" => n.use_memory = parse_one(k, v)?,
                "use_encoder2" => n.use_encoder2 = parse_one(k, v)?,
                "epochs" => t.epochs = parse_one(k, v)?,
                "batch_size" => t.batch_size = parse_one(k, v)?,
                "lr" => t.lr = parse_one(k, v)?,
                "weight_decay" => t.weight_decay = parse_one(k, v)?,
                "seed" => t.seed = parse_one(k, v)?,
                "train_samples" => t.train_samples = parse_one(k, v)?,
                "test_samples" => t.test_samples = parse_one(k, v)?,
                "augment" => t.augment = parse_one(k, v)?,
                _ => return Err(ConfigError::UnknownKey(k.clone())),
            }
        }
        cfg.network.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let (n, t) = (&self.network, &self.train);
        let mut s = String::new();
        let _ = writeln!(s, "res1 = {}", n.res1);
        let _ = writeln!(s, "res2 = {}", n.res2);
        let _ = writeln!(s, "channels = {}", join(&n.channels));
        let _ = writeln!(s, "enc1_depths = {}", join(&n.enc1_depths));
        let _ = writeln!(s, "enc2_depths = {}", join(&n.enc2_depths));
        let _ = writeln!(s, "window = {}", n.window);
        let _ = writeln!(s, "classes = {}", n.classes);
        let _ = writeln!(s, "memory = {}", n.memory);
        let _ = writeln!(s, "use_memory = {}", n.use_memory);
        let _ = writeln!(s, "use_encoder2 = {}", n.use_encoder2);
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "lr = {:?}", t.lr);
        let _ = writeln!(s, "weight_decay = {:?}", t.weight_decay);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "train_samples = {}", t.train_samples);
        let _ = writeln!(s, "test_samples = {}", t.test_samples);
        let _ = writeln!(s, "augment = {}", t.augment);
        s
    }
}
