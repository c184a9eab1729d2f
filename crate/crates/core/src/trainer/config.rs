//! Flat `key = value` run configuration with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::backbone::CONV4_FILTERS;
use crate::error::{Error, Result};
use crate::fusion::FusionKind;
use crate::semantics::AuxLossKind;

use super::optim::OptimizerKind;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "SEMCROSS_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NumericMode {
    F32,
    F64,
}

impl FromStr for NumericMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            other => Err(Error::Config(format!("numeric_mode must be f32 or f64, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for NumericMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Manifest root; `None` only for in-process use.
    pub dataset: Option<PathBuf>,
    /// Word-vector file; defaults to `<dataset>/vectors.txt`.
    pub vectors: Option<PathBuf>,
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub lambda: f64,
    pub tau: f64,
    pub tau_t: f64,
    /// Attention logit scale; `None` means `1/√l_out`.
    pub scale: Option<f64>,
    pub fusion: FusionKind,
    pub aux_loss: AuxLossKind,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    /// Validation episodes per epoch (drives the plateau schedule).
    pub val_episodes: usize,
    /// Episodes for final evaluation.
    pub eval_episodes: usize,
    pub seed: u64,
    pub numeric_mode: NumericMode,
    pub image_size: usize,
    pub filters: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            vectors: None,
            ways: 5,
            shots: 1,
            queries: 16,
            lambda: 0.1,
            tau: 1.0,
            tau_t: 1.0,
            scale: None,
            fusion: FusionKind::Cam,
            aux_loss: AuxLossKind::Kl,
            optimizer: OptimizerKind::AdamW,
            lr: 0.001,
            weight_decay: 0.01,
            epochs: 200,
            episodes_per_epoch: 20,
            val_episodes: 100,
            eval_episodes: 600,
            seed: 0,
            numeric_mode: NumericMode::F32,
            image_size: 84,
            filters: CONV4_FILTERS.to_vec(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Parse config text over the defaults. Unknown keys are errors.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file, resolve relative paths against its directory and
    /// apply the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset, &mut cfg.vectors].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = parse(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "vectors" => self.vectors = Some(PathBuf::from(value)),
            "ways" => self.ways = parse(key, value)?,
            "shots" => self.shots = parse(key, value)?,
            "queries" => self.queries = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "tau_t" => self.tau_t = parse(key, value)?,
            "scale" => {
                self.scale = if value == "auto" { None } else { Some(parse(key, value)?) }
            }
            "fusion" => self.fusion = parse(key, value)?,
            "aux_loss" => self.aux_loss = parse(key, value)?,
            "optimizer" => self.optimizer = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "episodes_per_epoch" => self.episodes_per_epoch = parse(key, value)?,
            "val_episodes" => self.val_episodes = parse(key, value)?,
            "eval_episodes" => self.eval_episodes = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "numeric_mode" => self.numeric_mode = parse(key, value)?,
            "image_size" => self.image_size = parse(key, value)?,
            "filters" => {
                self.filters = value
                    .split(',')
                    .map(|f| parse(key, f.trim()))
                    .collect::<Result<_>>()?
            }
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.tau > 0.0) || !(self.tau_t > 0.0) || self.scale.is_some_and(|s| !(s > 0.0)) {
            return bad("tau, tau_t and scale must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr must be positive and weight_decay non-negative".into());
        }
        let counts = [
            ("ways", self.ways),
            ("shots", self.shots),
            ("queries", self.queries),
            ("epochs", self.epochs),
            ("episodes_per_epoch", self.episodes_per_epoch),
            ("val_episodes", self.val_episodes),
            ("eval_episodes", self.eval_episodes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.filters.is_empty() || self.filters.contains(&0) {
            return bad("filters must list positive channel counts".into());
        }
        if self.image_size < 16 {
            return bad(format!("image_size must be at least 16, got {}", self.image_size));
        }
        Ok(())
    }

    /// Whether the auxiliary loss enters the objective.
    pub fn multi_task(&self) -> bool {
        self.lambda > 0.0
    }

    pub fn vectors_path(&self) -> Option<PathBuf> {
        self.vectors
            .clone()
            .or_else(|| self.dataset.as_ref().map(|d| d.join("vectors.txt")))
    }

    /// Every key in a fixed order, in the format [`RunConfig::parse_str`] reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        if let Some(d) = path(&self.dataset) {
            let _ = writeln!(s, "dataset = {d}");
        }
        if let Some(v) = path(&self.vectors) {
            let _ = writeln!(s, "vectors = {v}");
        }
        let scale = self.scale.map_or("auto".to_string(), |v| v.to_string());
        let filters: Vec<String> = self.filters.iter().map(usize::to_string).collect();
        let _ = write!(
            s,
            "ways = {}\nshots = {}\nqueries = {}\nlambda = {}\ntau = {}\ntau_t = {}\nscale = {scale}\n\
             fusion = {}\naux_loss = {}\noptimizer = {}\nlr = {}\nweight_decay = {}\nepochs = {}\n\
             episodes_per_epoch = {}\nval_episodes = {}\neval_episodes = {}\nseed = {}\n\
             numeric_mode = {}\nimage_size = {}\nfilters = {}\n",
            self.ways,
            self.shots,
            self.queries,
            self.lambda,
            self.tau,
            self.tau_t,
            self.fusion,
            self.aux_loss,
            self.optimizer,
            self.lr,
            self.weight_decay,
            self.epochs,
            self.episodes_per_epoch,
            self.val_episodes,
            self.eval_episodes,
            self.seed,
            self.numeric_mode,
            self.image_size,
            filters.join(","),
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_overrides() {
        let cfg = RunConfig::parse_str("# header\nways = 3  # trailing\n\nlambda=0.5\nscale = auto\n").unwrap();
        assert_eq!(cfg.ways, 3);
        assert_eq!(cfg.lambda, 0.5);
        assert_eq!(cfg.scale, None);
        assert_eq!(cfg.queries, 16);
    }

    #[test]
    fn rejects_bad_input() {
        for text in ["lambda = 1.5", "bogus = 1", "ways = 0", "tau = -1", "ways 3", "fusion = magic"] {
            assert!(matches!(RunConfig::parse_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn text_roundtrip() {
        let cfg = RunConfig {
            dataset: Some("data".into()),
            scale: Some(0.25),
            filters: vec![8, 16],
            fusion: FusionKind::SqueezeExcitation,
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::parse_str(&cfg.to_text()).unwrap(), cfg);
    }
}
