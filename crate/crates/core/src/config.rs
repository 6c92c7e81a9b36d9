//! Run configuration files.
//!
//! One `key = value` per line; `#` starts a comment. Every key is optional
//! and unknown keys are rejected. `preset = desk | tiny | full` selects the
//! network layout the other keys then adjust, wherever it appears in the
//! file. Lists are comma-separated.
//!
//! ```text
//! preset = desk
//! widths = 16, 32, 64, 64
//! lr = 2e-3
//! max_steps = 300
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{config, Error, Result};
use crate::net::NetConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    /// Dataset directory holding a manifest.
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(config(format!("`{key}`: expected a boolean, got `{value}`"))),
    }
}

pub fn preset(name: &str) -> Result<NetConfig> {
    match name {
        "desk" => Ok(NetConfig::desk()),
        "tiny" => Ok(NetConfig::tiny()),
        "full" => Ok(NetConfig::full_scale()),
        _ => Err(config(format!("unknown preset `{name}` (desk, tiny, full)"))),
    }
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(config(format!("line {}: expected `key = value`", n + 1)));
            };
            pairs.push((n + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = RunConfig::default();
        if let Some((_, _, v)) = pairs.iter().rev().find(|(_, k, _)| k == "preset") {
            cfg.net = preset(v)?;
        }
        for (n, key, value) in &pairs {
            cfg.set(key, value).map_err(|e| {
                config(format!(
                    "line {n}: {}",
                    e.to_string().trim_start_matches("configuration error: ")
                ))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
        text.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()
    }

    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (n, t) = (&mut self.net, &mut self.train);
        match key {
            "preset" => {}
            "enable_ams" => n.enable_ams = parse_bool(key, v)?,
            "enable_gf" => n.enable_gf = parse_bool(key, v)?,
            "enable_sgr" => n.enable_sgr = parse_bool(key, v)?,
            "enable_cgr" => n.enable_cgr = parse_bool(key, v)?,
            "widths" => n.widths = parse_list(key, v)?,
            "downsample" => n.downsample = parse_list(key, v)?,
            "fusion_width" => n.fusion_width = parse(key, v)?,
            "gate_width" => n.gate_width = parse(key, v)?,
            "predictor_width" => n.predictor_width = parse(key, v)?,
            "q" => n.q = parse(key, v)?,
            "n_cgr" => n.n_cgr = parse(key, v)?,
            "input_residual" => n.input_residual = parse_bool(key, v)?,
            "m_pool" => n.m_pool = parse(key, v)?,
            "shots" => n.shots = parse(key, v)?,
            "init_seed" => n.seed = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "beta1" => t.beta1 = parse(key, v)?,
            "beta2" => t.beta2 = parse(key, v)?,
            "eps" => t.eps = parse(key, v)?,
            "batch" => t.batch = parse(key, v)?,
            "crop" => t.crop = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "max_steps" => t.max_steps = if v == "none" { None } else { Some(parse(key, v)?) },
            "lr_decay_factor" => t.lr_decay_factor = parse(key, v)?,
            "lr_decay_every" => t.lr_decay_every = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "lambda" => t.loss.lambda = parse(key, v)?,
            "ssim_window" => t.loss.window = parse(key, v)?,
            "ssim_sigma" => t.loss.sigma = parse(key, v)?,
            "ssim_k1" => t.loss.k1 = parse(key, v)?,
            "ssim_k2" => t.loss.k2 = parse(key, v)?,
            "data" => self.data = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "log" => self.log = Some(PathBuf::from(v)),
            _ => return Err(config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every setting as parseable text.
    pub fn to_text(&self) -> String {
        let (n, t) = (&self.net, &self.train);
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("enable_ams", n.enable_ams.to_string());
        kv("enable_gf", n.enable_gf.to_string());
        kv("enable_sgr", n.enable_sgr.to_string());
        kv("enable_cgr", n.enable_cgr.to_string());
        kv("widths", list(&n.widths));
        kv("downsample", list(&n.downsample));
        kv("fusion_width", n.fusion_width.to_string());
        kv("gate_width", n.gate_width.to_string());
        kv("predictor_width", n.predictor_width.to_string());
        kv("q", n.q.to_string());
        kv("n_cgr", n.n_cgr.to_string());
        kv("input_residual", n.input_residual.to_string());
        kv("m_pool", n.m_pool.to_string());
        kv("shots", n.shots.to_string());
        kv("init_seed", n.seed.to_string());
        kv("lr", format!("{:e}", t.lr));
        kv("beta1", t.beta1.to_string());
        kv("beta2", t.beta2.to_string());
        kv("eps", format!("{:e}", t.eps));
        kv("batch", t.batch.to_string());
        kv("crop", t.crop.to_string());
        kv("epochs", t.epochs.to_string());
        kv("max_steps", t.max_steps.map_or("none".into(), |m| m.to_string()));
        kv("lr_decay_factor", t.lr_decay_factor.to_string());
        kv("lr_decay_every", t.lr_decay_every.to_string());
        kv("seed", t.seed.to_string());
        kv("lambda", t.loss.lambda.to_string());
        kv("ssim_window", t.loss.window.to_string());
        kv("ssim_sigma", t.loss.sigma.to_string());
        kv("ssim_k1", t.loss.k1.to_string());
        kv("ssim_k2", t.loss.k2.to_string());
        for (k, p) in [
            ("data", &self.data),
            ("checkpoint", &self.checkpoint),
            ("log", &self.log),
        ] {
            if let Some(p) = p {
                kv(k, p.display().to_string());
            }
        }
        s
    }
}
