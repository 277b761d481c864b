//! Flat `key = value` configuration using the hyperparameter symbol names.
//!
//! ```text
//! # comments and blank lines are ignored
//! s = 8, 16, 32, 64
//! A_8 = (19, 27), (44, 40), (38, 94)
//! b_s = 64
//! tau_ck = 0.2
//! ```
//!
//! Loss weights left unset follow their formulas in `K`, `w` and the number
//! of grids. Later assignments override earlier ones, so applying the file
//! and then command-line values gives flag > file > default precedence.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::codec::{Anchor, AnchorLevel, AnchorSet, AssignConfig, DEFAULT_STRIDES};
use crate::loss::LossWeights;
use crate::pipeline::InferenceConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("bad value for '{key}': {reason}")]
    BadValue { key: String, reason: String },
    #[error("inconsistent configuration: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub num_keypoints: usize,
    pub height: u32,
    pub width: u32,
    pub strides: Vec<u32>,
    pub anchors: BTreeMap<u32, Vec<Anchor>>,
    pub b_s: f64,
    pub anchor_t: f64,
    pub omega: Option<Vec<f64>>,
    pub lambda_obj: Option<f64>,
    pub lambda_box: Option<f64>,
    pub lambda_cls: Option<f64>,
    pub lambda_kps: Option<f64>,
    pub batch_size: usize,
    pub inference: InferenceConfig,
}

impl Default for Config {
    fn default() -> Self {
        let set = AnchorSet::default();
        Self {
            num_keypoints: 17,
            height: 1280,
            width: 1280,
            strides: DEFAULT_STRIDES.to_vec(),
            anchors: set.levels().iter().map(|l| (l.stride, l.anchors.clone())).collect(),
            b_s: 64.0,
            anchor_t: 4.0,
            omega: None,
            lambda_obj: None,
            lambda_box: None,
            lambda_cls: None,
            lambda_kps: None,
            batch_size: 1,
            inference: InferenceConfig::default(),
        }
    }
}

fn numbers(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(|c: char| c == ',' || c == '(' || c == ')' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                reason: format!("'{t}' is not a number"),
            })
        })
        .collect()
}

fn scalar(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v = numbers(key, value)?;
    match v.as_slice() {
        [x] if x.is_finite() => Ok(*x),
        _ => Err(ConfigError::BadValue {
            key: key.into(),
            reason: "expected one finite number".into(),
        }),
    }
}

fn integer<T: TryFrom<u64>>(key: &str, value: &str) -> Result<T, ConfigError> {
    let bad = || ConfigError::BadValue {
        key: key.into(),
        reason: format!("'{value}' is not a valid non-negative integer"),
    };
    let n: u64 = value.trim().parse().map_err(|_| bad())?;
    T::try_from(n).map_err(|_| bad())
}

/// Splits config text into `(line, key, value)` triples.
pub fn parse_lines(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: n + 1,
            reason: "expected 'key = value'".into(),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(ConfigError::Syntax {
                line: n + 1,
                reason: "empty key or value".into(),
            });
        }
        out.push((n + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl Config {
    /// Sets one key from its textual value.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "K" => self.num_keypoints = integer(key, value)?,
            "h" => self.height = integer(key, value)?,
            "w" => self.width = integer(key, value)?,
            "N_b" => self.batch_size = integer(key, value)?,
            "s" => {
                self.strides = value
                    .split(',')
                    .map(|t| integer::<u32>(key, t))
                    .collect::<Result<_, _>>()?;
            }
            "b_s" => self.b_s = scalar(key, value)?,
            "anchor_t" => self.anchor_t = scalar(key, value)?,
            "omega" => self.omega = Some(numbers(key, value)?),
            "lambda_obj" => self.lambda_obj = Some(scalar(key, value)?),
            "lambda_box" => self.lambda_box = Some(scalar(key, value)?),
            "lambda_cls" => self.lambda_cls = Some(scalar(key, value)?),
            "lambda_kps" => self.lambda_kps = Some(scalar(key, value)?),
            "tau_cp" => self.inference.tau_cp = scalar(key, value)?,
            "tau_ck" => self.inference.tau_ck = scalar(key, value)?,
            "tau_bp" => self.inference.tau_bp = scalar(key, value)?,
            "tau_bk" => self.inference.tau_bk = scalar(key, value)?,
            "tau_fd" => self.inference.tau_fd = scalar(key, value)?,
            "tau_fc" => self.inference.tau_fc = scalar(key, value)?,
            _ => {
                let stride = key
                    .strip_prefix("A_")
                    .and_then(|s| s.parse::<u32>().ok())
                    .ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
                let v = numbers(key, value)?;
                if v.is_empty() || v.len() % 2 != 0 {
                    return Err(ConfigError::BadValue {
                        key: key.into(),
                        reason: "expected (width, height) pairs".into(),
                    });
                }
                self.anchors.insert(stride, v.chunks_exact(2).map(|p| Anchor { w: p[0], h: p[1] }).collect());
            }
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (line, k, v) in parse_lines(text)? {
            self.apply(&k, &v).map_err(|e| match e {
                ConfigError::BadValue { .. } | ConfigError::UnknownKey(_) => ConfigError::Syntax {
                    line,
                    reason: e.to_string(),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.anchor_set()?;
        self.inference.validate().map_err(|e| ConfigError::Inconsistent(e.to_string()))?;
        if self.num_keypoints == 0 || self.num_keypoints > 64 {
            return Err(ConfigError::Inconsistent("K must lie in 1..=64".into()));
        }
        if !(self.b_s > 0.0) || !(self.anchor_t > 1.0) {
            return Err(ConfigError::Inconsistent("b_s must be positive and anchor_t above 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Inconsistent("N_b must be positive".into()));
        }
        let w = self.loss_weights();
        if w.omega.len() != self.strides.len() {
            return Err(ConfigError::Inconsistent(format!("{} omega values for {} grids", w.omega.len(), self.strides.len())));
        }
        Ok(())
    }

    pub fn anchor_set(&self) -> Result<AnchorSet, ConfigError> {
        let mut levels = Vec::with_capacity(self.strides.len());
        for &stride in &self.strides {
            let anchors = self
                .anchors
                .get(&stride)
                .ok_or_else(|| ConfigError::Inconsistent(format!("no anchors A_{stride} for stride {stride}")))?;
            levels.push(AnchorLevel { stride, anchors: anchors.clone() });
        }
        let set = AnchorSet::new(levels).map_err(|e| ConfigError::Inconsistent(e.to_string()))?;
        set.check_image(self.height, self.width).map_err(|e| ConfigError::Inconsistent(e.to_string()))?;
        Ok(set)
    }

    pub fn assign_config(&self) -> AssignConfig {
        AssignConfig {
            height: self.height,
            width: self.width,
            num_keypoints: self.num_keypoints,
            keypoint_box_size: self.b_s,
            anchor_tolerance: self.anchor_t,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        let mut w = LossWeights::defaults(self.num_keypoints, self.width, self.strides.len(), self.batch_size);
        if let Some(o) = &self.omega {
            w.omega = o.clone();
        }
        w.lambda_obj = self.lambda_obj.unwrap_or(w.lambda_obj);
        w.lambda_box = self.lambda_box.unwrap_or(w.lambda_box);
        w.lambda_cls = self.lambda_cls.unwrap_or(w.lambda_cls);
        w.lambda_kps = self.lambda_kps.unwrap_or(w.lambda_kps);
        w
    }

    /// Every key with its effective value.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let w = self.loss_weights();
        let i = &self.inference;
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        line("K", self.num_keypoints.to_string());
        line("h", self.height.to_string());
        line("w", self.width.to_string());
        line("s", self.strides.iter().map(u32::to_string).collect::<Vec<_>>().join(", "));
        for (stride, anchors) in &self.anchors {
            let pairs: Vec<String> = anchors.iter().map(|a| format!("({}, {})", a.w, a.h)).collect();
            line(&format!("A_{stride}"), pairs.join(", "));
        }
        line("b_s", self.b_s.to_string());
        line("anchor_t", self.anchor_t.to_string());
        line("omega", list(&w.omega));
        line("lambda_obj", w.lambda_obj.to_string());
        line("lambda_box", w.lambda_box.to_string());
        line("lambda_cls", w.lambda_cls.to_string());
        line("lambda_kps", w.lambda_kps.to_string());
        line("N_b", self.batch_size.to_string());
        line("tau_cp", i.tau_cp.to_string());
        line("tau_ck", i.tau_ck.to_string());
        line("tau_bp", i.tau_bp.to_string());
        line("tau_bk", i.tau_bk.to_string());
        line("tau_fd", i.tau_fd.to_string());
        line("tau_fc", i.tau_fc.to_string());
        out
    }
}
