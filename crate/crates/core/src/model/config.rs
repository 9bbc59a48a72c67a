use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

/// Encoder hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ff_filter: usize,
    pub ff_kernels: (usize, usize),
    pub dropout: f64,
    pub max_len: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Tiny,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Preset::Paper),
            "tiny" => Ok(Preset::Tiny),
            _ => Err(format!("unknown preset `{s}`")),
        }
    }
}

impl ModelConfig {
    /// 8 FFT blocks, hidden 512, 8 heads, 512 positions.
    pub fn paper() -> Self {
        Self {
            layers: 8,
            hidden: 512,
            heads: 8,
            ff_filter: 2048,
            ff_kernels: (9, 1),
            dropout: 0.1,
            max_len: 512,
        }
    }

    pub fn tiny() -> Self {
        Self {
            layers: 2,
            hidden: 32,
            heads: 2,
            ff_filter: 64,
            ff_kernels: (9, 1),
            dropout: 0.1,
            max_len: 64,
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self::paper(),
            Preset::Tiny => Self::tiny(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.ff_filter == 0 {
            return fail("layer, hidden, head and filter counts must be positive".into());
        }
        if self.hidden % self.heads != 0 {
            return fail(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        let (k1, k2) = self.ff_kernels;
        if k1 % 2 == 0 || k2 % 2 == 0 {
            return fail(format!("convolution kernels must be odd, got ({k1}, {k2})"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_len < 3 {
            return fail("max_len must leave room for BOS, EOS and one phoneme".into());
        }
        Ok(())
    }

    /// `key=value` lines, in fixed order.
    pub fn to_document(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "layers={}", self.layers);
        let _ = writeln!(s, "hidden={}", self.hidden);
        let _ = writeln!(s, "heads={}", self.heads);
        let _ = writeln!(s, "ff_filter={}", self.ff_filter);
        let _ = writeln!(s, "ff_kernel1={}", self.ff_kernels.0);
        let _ = writeln!(s, "ff_kernel2={}", self.ff_kernels.1);
        let _ = writeln!(s, "dropout={}", self.dropout);
        let _ = writeln!(s, "max_len={}", self.max_len);
        s
    }

    /// Parses the keys written by [`ModelConfig::to_document`]; unknown keys are returned.
    pub fn from_document(doc: &str) -> std::result::Result<(Self, Vec<(String, String)>), String> {
        let mut cfg = ModelConfig::tiny();
        let mut seen = 0;
        let mut extra = Vec::new();
        for line in doc.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line `{line}` is not key=value"))?;
            let num = || v.parse::<usize>().map_err(|_| format!("bad value for `{k}`"));
            match k {
                "layers" => cfg.layers = num()?,
                "hidden" => cfg.hidden = num()?,
                "heads" => cfg.heads = num()?,
                "ff_filter" => cfg.ff_filter = num()?,
                "ff_kernel1" => cfg.ff_kernels.0 = num()?,
                "ff_kernel2" => cfg.ff_kernels.1 = num()?,
                "dropout" => {
                    cfg.dropout = v.parse().map_err(|_| format!("bad value for `{k}`"))?
                }
                "max_len" => cfg.max_len = num()?,
                _ => {
                    extra.push((k.to_string(), v.to_string()));
                    continue;
                }
            }
            seen += 1;
        }
        if seen != 8 {
            return Err("missing model configuration keys".into());
        }
        Ok((cfg, extra))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::paper().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        let t = ModelConfig::tiny();
        assert_eq!((t.layers, t.hidden, t.heads, t.max_len), (2, 32, 2, 64));
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut c = ModelConfig::tiny();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny();
        c.ff_kernels = (4, 1);
        assert!(c.validate().is_err());
    }

    #[test]
    fn document_round_trip() {
        let c = ModelConfig::paper();
        let (back, extra) = ModelConfig::from_document(&c.to_document()).unwrap();
        assert_eq!(back, c);
        assert!(extra.is_empty());
        assert!(ModelConfig::from_document("layers=2\n").is_err());
    }
}
