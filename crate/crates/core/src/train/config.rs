use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Flat training configuration. Serializes to `key=value` lines; unknown
/// keys in an input file are faults rather than silently ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iters: usize,
    pub seed: u64,
    /// 0 means "derive as 10% of iters".
    pub warmup_iters: usize,
    pub lambda_mask_start: f64,
    pub lambda_mask_end: f64,
    pub lambda_depth: f64,
    pub mask_threshold: f64,
    pub crop_ratio: f64,
    pub densify_interval: usize,
    /// Densification stops after this fraction of training.
    pub densify_until: f64,
    pub max_gaussians: usize,
    pub sh_degree: usize,
    pub triplane_resolution: usize,
    pub parse_base: usize,
    pub parse_depth: usize,
    pub encoder_base: usize,
    pub encoder_depth: usize,
    pub hidden: usize,
    pub lr_center: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_intrinsic: f64,
    pub lr_nets: f64,
    pub use_global: bool,
    pub use_local: bool,
    pub use_mask: bool,
    pub use_depth: bool,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 5000,
            seed: 7,
            warmup_iters: 0,
            lambda_mask_start: 0.4,
            lambda_mask_end: 0.1,
            lambda_depth: 0.05,
            mask_threshold: 0.5,
            crop_ratio: 0.5,
            densify_interval: 200,
            densify_until: 0.6,
            max_gaussians: 20_000,
            sh_degree: 1,
            triplane_resolution: 32,
            parse_base: 8,
            parse_depth: 2,
            encoder_base: 8,
            encoder_depth: 2,
            hidden: 32,
            lr_center: 1.6e-4,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_intrinsic: 2.5e-3,
            lr_nets: 1e-3,
            use_global: true,
            use_local: true,
            use_mask: true,
            use_depth: true,
            log_every: 50,
        }
    }
}

macro_rules! config_fields {
    ($m:ident) => {
        $m!(iters, usize);
        $m!(seed, u64);
        $m!(warmup_iters, usize);
        $m!(lambda_mask_start, f64);
        $m!(lambda_mask_end, f64);
        $m!(lambda_depth, f64);
        $m!(mask_threshold, f64);
        $m!(crop_ratio, f64);
        $m!(densify_interval, usize);
        $m!(densify_until, f64);
        $m!(max_gaussians, usize);
        $m!(sh_degree, usize);
        $m!(triplane_resolution, usize);
        $m!(parse_base, usize);
        $m!(parse_depth, usize);
        $m!(encoder_base, usize);
        $m!(encoder_depth, usize);
        $m!(hidden, usize);
        $m!(lr_center, f64);
        $m!(lr_scale, f64);
        $m!(lr_rotation, f64);
        $m!(lr_opacity, f64);
        $m!(lr_intrinsic, f64);
        $m!(lr_nets, f64);
        $m!(use_global, bool);
        $m!(use_local, bool);
        $m!(use_mask, bool);
        $m!(use_depth, bool);
        $m!(log_every, usize);
    };
}

impl TrainConfig {
    /// Warm-up length in iterations; defaults to a tenth of training.
    pub fn warmup(&self) -> usize {
        if self.warmup_iters > 0 {
            self.warmup_iters
        } else {
            self.iters / 10
        }
    }

    /// Mask-regularizer weight schedule: held at the start value through
    /// warm-up, then linear to the end value at the final iteration. Both
    /// endpoints are exact.
    pub fn lambda_mask(&self, iter: usize) -> f64 {
        let w = self.warmup();
        let last = self.iters.saturating_sub(1);
        if iter <= w || last <= w {
            return self.lambda_mask_start;
        }
        if iter >= last {
            return self.lambda_mask_end;
        }
        let t = (iter - w) as f64 / (last - w) as f64;
        self.lambda_mask_start + (self.lambda_mask_end - self.lambda_mask_start) * t
    }

    pub fn parse(text: &str, path: &Path) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, format!("line {}: expected key=value", ln + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::parse(path, format!("line {}: {what} for key {key}", ln + 1));
            macro_rules! apply {
                ($field:ident, $ty:ty) => {
                    if key == stringify!($field) {
                        cfg.$field = value.parse::<$ty>().map_err(|_| bad("bad value"))?;
                        continue;
                    }
                };
            }
            config_fields!(apply);
            return Err(Error::parse(path, format!("line {}: unknown key {key}", ln + 1)));
        }
        cfg.validate().map_err(|e| Error::parse(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        macro_rules! emit {
            ($field:ident, $ty:ty) => {
                writeln!(s, "{}={}", stringify!($field), self.$field).unwrap();
            };
        }
        config_fields!(emit);
        s
    }

    /// Numeric encoding used to embed the configuration in checkpoints.
    pub fn encode(&self) -> Vec<f64> {
        let mut out = Vec::new();
        macro_rules! enc {
            ($field:ident, bool) => {
                out.push(if self.$field { 1.0 } else { 0.0 });
            };
            ($field:ident, $ty:ty) => {
                out.push(self.$field as f64);
            };
        }
        config_fields!(enc);
        out
    }

    pub fn decode(vals: &[f64]) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        let mut it = vals.iter();
        let mut short = false;
        macro_rules! dec {
            ($field:ident, bool) => {
                match it.next() {
                    Some(&v) => cfg.$field = v != 0.0,
                    None => short = true,
                }
            };
            ($field:ident, $ty:ty) => {
                match it.next() {
                    Some(&v) => cfg.$field = v as $ty,
                    None => short = true,
                }
            };
        }
        config_fields!(dec);
        if short || it.next().is_some() {
            return Err(Error::Validation("checkpoint config block has wrong length".into()));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Validation(m.into()));
        if self.iters == 0 {
            return fail("iters must be positive");
        }
        if !(0.0..=1.0).contains(&self.mask_threshold) {
            return fail("mask_threshold must be in [0,1]");
        }
        if !(0.0..=1.0).contains(&self.densify_until) {
            return fail("densify_until must be in [0,1]");
        }
        if self.crop_ratio <= 0.0 {
            return fail("crop_ratio must be positive");
        }
        if self.densify_interval == 0 {
            return fail("densify_interval must be positive");
        }
        if !self.triplane_resolution.is_power_of_two() {
            return fail("triplane_resolution must be a power of two");
        }
        if self.sh_degree > 3 {
            return fail("sh_degree must be at most 3");
        }
        Ok(())
    }
}
