//! Run configuration: defaults, `key = value` files and overrides.

use std::path::Path;

use serde::Serialize;

use crate::apps::{AbstractionConfig, RetinexConfig};
use crate::error::{HipeError, Result};
use crate::guider::ScaleSchedule;
use crate::peeler::PeelConfig;

/// Every tunable of a run. Flags override file values, which override
/// defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunConfig {
    pub peel: PeelConfig,
    pub schedule: ScaleSchedule,
    pub abstraction: AbstractionConfig,
    pub retinex: RetinexConfig,
    pub seed: u64,
    pub threads: Option<usize>,
}

/// Keys accepted in configuration files.
pub const KEYS: &[&str] = &[
    "lambda_pre",
    "lambda_con",
    "beta_g",
    "epsilon",
    "cg_tol",
    "cg_max_iters",
    "solver",
    "anchor",
    "alpha1",
    "eta",
    "T",
    "scale_index",
    "quant_levels",
    "edge_overlay",
    "edge_color",
    "retinex_scales",
    "retinex_weights",
    "gain",
    "offset",
    "seed",
    "threads",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("`{key}` expects a number, got `{value}`"))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<Vec<T>, String> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("`{key}` expects a boolean, got `{value}`")),
    }
}

impl RunConfig {
    /// Set one key and check the invariants it participates in.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let value = value.trim();
        match key {
            "lambda_pre" => self.peel.lambda_pre = parse_num(key, value)?,
            "lambda_con" => self.peel.lambda_con = parse_num(key, value)?,
            "beta_g" => self.peel.beta_g = parse_num(key, value)?,
            "epsilon" => self.peel.epsilon = parse_num(key, value)?,
            "cg_tol" => self.peel.cg_tol = parse_num(key, value)?,
            "cg_max_iters" => self.peel.cg_max_iters = Some(parse_num(key, value)?),
            "solver" => self.peel.solver = value.to_string(),
            "anchor" => self.peel.anchor = value.parse().map_err(|e: HipeError| e.to_string())?,
            "alpha1" => self.schedule.alpha1 = parse_num(key, value)?,
            "eta" => self.schedule.eta = parse_num(key, value)?,
            "T" | "scales" => self.schedule.scales = parse_num(key, value)?,
            "scale_index" => self.abstraction.scale_index = parse_num(key, value)?,
            "quant_levels" => self.abstraction.quant_levels = parse_num(key, value)?,
            "edge_overlay" => self.abstraction.edge_overlay = parse_bool(key, value)?,
            "edge_color" => {
                let c: Vec<f64> = parse_list(key, value)?;
                if c.len() != 3 || c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err("`edge_color` expects three values in [0, 1]".into());
                }
                self.abstraction.edge_color = [c[0], c[1], c[2]];
            }
            "retinex_scales" => self.retinex.scale_indices = parse_list(key, value)?,
            "retinex_weights" => self.retinex.weights = parse_list(key, value)?,
            "gain" => self.retinex.gain = parse_num(key, value)?,
            "offset" => self.retinex.offset = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "threads" => {
                let n: usize = parse_num(key, value)?;
                if n == 0 {
                    return Err("`threads` must be positive".into());
                }
                self.threads = Some(n);
            }
            other => return Err(format!("unknown key `{other}`")),
        }
        self.validate().map_err(|e| e.to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.peel.validate()?;
        self.schedule.validate()?;
        if self.abstraction.quant_levels < 2 {
            return Err(HipeError::InvalidParameter(
                "quant_levels must be at least 2".into(),
            ));
        }
        if self.abstraction.scale_index == 0 {
            return Err(HipeError::InvalidParameter("scale_index is 1-based".into()));
        }
        if self.retinex.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(HipeError::InvalidParameter(
                "retinex weights must be nonnegative".into(),
            ));
        }
        if !(self.retinex.gain.is_finite() && self.retinex.offset.is_finite()) {
            return Err(HipeError::InvalidParameter(
                "gain and offset must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of `self`.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| HipeError::Parse {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            self.set(key.trim(), value)
                .map_err(|message| HipeError::Parse { line, message })?;
        }
        Ok(())
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    cfg.merge_text(text)?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HipeError::io(path, e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
        assert_eq!(
            parse_config("# only a comment\n\n   \n").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn default_lambda_con_is_unchanged() {
        assert_eq!(
            parse_config("lambda_con = 4").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn negative_weight_is_a_parse_error() {
        match parse_config("beta_g = 2\nlambda_con = -1\n") {
            Err(HipeError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(matches!(
            parse_config("lambda = 1"),
            Err(HipeError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("no equals sign"),
            Err(HipeError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn parses_every_key() {
        let cfg = parse_config(
            "lambda_pre = 0.5\nlambda_con=3 # trailing\nbeta_g = 2\nepsilon = 0.01\n\
             cg_tol = 1e-8\ncg_max_iters = 50\nsolver = cg\nanchor = first\nalpha1 = 0.2\n\
             eta = 2\nT = 3\nscale_index = 2\nquant_levels = 4\nedge_overlay = true\n\
             edge_color = 1, 0, 0\nretinex_scales = 1,3\nretinex_weights = 0.25, 0.75\n\
             gain = 2\noffset = 0.1\nseed = 9\nthreads = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.peel.lambda_pre, 0.5);
        assert_eq!(cfg.peel.lambda_con, 3.0);
        assert_eq!(cfg.peel.cg_max_iters, Some(50));
        assert_eq!(cfg.peel.solver, "cg");
        assert_eq!(cfg.peel.anchor, crate::peeler::Anchor::First);
        assert_eq!(cfg.schedule, ScaleSchedule::new(0.2, 2.0, 3).unwrap());
        assert_eq!(cfg.abstraction.edge_color, [1.0, 0.0, 0.0]);
        assert_eq!(cfg.retinex.scale_indices, vec![1, 3]);
        assert_eq!(cfg.retinex.weights, vec![0.25, 0.75]);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.threads, Some(2));
        assert_eq!(KEYS.len(), 21);
    }
}
