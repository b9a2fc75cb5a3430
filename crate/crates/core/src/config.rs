//! Flat `key = value` run configuration.
//!
//! One setting per line; `#` starts a comment and blank lines are ignored.
//! Lists are comma separated. Unknown keys are errors. Keys:
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `k_max` | largest number of interior knots | 50 |
//! | `eps1`, `eps2` | Dirichlet parameters of the transition rows and initial distribution | 1, 1 |
//! | `zeta_shape`, `zeta_rate` | gamma hyperprior of `zeta` | 1, 1 |
//! | `tied_transitions` | two states sharing one switching probability | false |
//! | `tau1` | knot relocation sd | 2% of the support width |
//! | `tau2`..`tau5`, `tau_w`, `tau_rescale` | random-walk scales | 0.1, 0.5, 1.6, 0.14, 0.5, 0.5 |
//! | `alpha` | birth proposal spread exponent | 1.8 |
//! | `adapt` | adapt scales during burn-in | true |
//! | `target_accept`, `target_accept_scalar` | adaptation targets | 0.25, 0.44 |
//! | `coeff_blocking` | `joint` or `per_state` | joint |
//! | `burn_in`, `iters`, `thin` | schedule | 50000, 50000, 10 |
//! | `check_every` | cache drift check interval, 0 disables | 1000 |
//! | `zero_inflated` | add a zero atom per state | false |
//! | `anchors` | per-state initial emission means | none |
//! | `initial_knots` | starting knot count, 0 draws it | 0 |
//! | `em_iters` | Baum-Welch refinement of the starting point | 0 |
//! | `smoothing_half_width` | initial grouping window | 2 |
//! | `lower`, `upper` | support bounds | padded data range |
//! | `pad` | relative padding of the data range | 0.05 |
//! | `grid_points` | density grid size for summaries | 512 |
//! | `candidates` | state counts for selection | 2,3,4,5 |
//! | `block` | averaging factor of the main series | 5 |
//! | `main_candidates` | state counts of the main model | 2 |
//! | `min_dwell` | bout rule run length | 30 |
//! | `sub_states` | states of the sub-model | 2 |
//! | `path_draws` | conditioning paths from posterior draws, 0 uses the point estimate | 0 |

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conditional::{PathMode, PipelineConfig};
use crate::error::{Error, Result};
use crate::hmm::padded_bounds;
use crate::prior::{InitOptions, PriorConfig};
use crate::sampler::{ChainConfig, CoeffBlocking, Schedule, TuningParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub prior: PriorConfig,
    pub tuning: TuningParams,
    /// Explicit knot step; otherwise scaled to the support.
    pub tau1: Option<f64>,
    pub schedule: Schedule,
    pub init: InitOptions,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pad: f64,
    pub grid_points: usize,
    pub candidates: Vec<usize>,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            prior: PriorConfig::default(),
            tuning: TuningParams::default(),
            tau1: None,
            schedule: Schedule::default(),
            init: InitOptions::default(),
            lower: None,
            upper: None,
            pad: 0.05,
            grid_points: 512,
            candidates: vec![2, 3, 4, 5],
            pipeline: PipelineConfig::default(),
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("invalid value `{raw}` for `{key}`")))
}

fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value `{raw}` for `{key}`"))),
    }
}

fn list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',').map(|s| value(key, s.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses a configuration file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, val) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key.trim(), val.trim()).map_err(|e| match e {
                Error::Config(message) => Error::Config(format!("line {}: {message}", i + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key. Command-line overrides go through here as well.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let t = &mut self.tuning;
        match key {
            "k_max" => self.prior.k_max = value(key, raw)?,
            "eps1" => self.prior.eps1 = value(key, raw)?,
            "eps2" => self.prior.eps2 = value(key, raw)?,
            "zeta_shape" => self.prior.zeta_shape = value(key, raw)?,
            "zeta_rate" => self.prior.zeta_rate = value(key, raw)?,
            "tied_transitions" => self.prior.tied_transitions = flag(key, raw)?,
            "tau1" => self.tau1 = Some(value(key, raw)?),
            "tau2" => t.tau2 = value(key, raw)?,
            "tau3" => t.tau3 = value(key, raw)?,
            "tau4" => t.tau4 = value(key, raw)?,
            "tau5" => t.tau5 = value(key, raw)?,
            "tau_w" => t.tau_w = value(key, raw)?,
            "tau_rescale" => t.tau_rescale = value(key, raw)?,
            "alpha" => t.alpha = value(key, raw)?,
            "adapt" => t.adapt = flag(key, raw)?,
            "target_accept" => t.target_accept = value(key, raw)?,
            "target_accept_scalar" => t.target_accept_scalar = value(key, raw)?,
            "coeff_blocking" => {
                t.coeff_blocking = match raw {
                    "joint" => CoeffBlocking::Joint,
                    "per_state" => CoeffBlocking::PerState,
                    _ => return Err(Error::Config(format!("invalid value `{raw}` for `{key}`"))),
                }
            }
            "burn_in" => self.schedule.burn_in = value(key, raw)?,
            "iters" => self.schedule.iters = value(key, raw)?,
            "thin" => self.schedule.thin = value(key, raw)?,
            "check_every" => {
                let n: usize = value(key, raw)?;
                self.schedule.check_every = (n > 0).then_some(n);
            }
            "zero_inflated" => self.init.zero_inflated = flag(key, raw)?,
            "anchors" => {
                self.init.anchors = if raw.is_empty() || raw == "none" {
                    None
                } else {
                    Some(list(key, raw)?)
                }
            }
            "smoothing_half_width" => self.init.smoothing_half_width = value(key, raw)?,
            "initial_knots" => {
                let k: usize = value(key, raw)?;
                self.init.initial_knots = (k > 0).then_some(k);
            }
            "em_iters" => self.init.em_iters = value(key, raw)?,
            "lower" => self.lower = Some(value(key, raw)?),
            "upper" => self.upper = Some(value(key, raw)?),
            "pad" => self.pad = value(key, raw)?,
            "grid_points" => self.grid_points = value(key, raw)?,
            "candidates" => self.candidates = list(key, raw)?,
            "block" => self.pipeline.block = value(key, raw)?,
            "main_candidates" => self.pipeline.main_candidates = list(key, raw)?,
            "min_dwell" => self.pipeline.min_dwell = value(key, raw)?,
            "sub_states" => self.pipeline.sub_states = value(key, raw)?,
            "path_draws" => {
                let m: usize = value(key, raw)?;
                self.pipeline.path_mode = if m == 0 {
                    PathMode::PointEstimate
                } else {
                    PathMode::PosteriorDraws(m)
                };
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        if key == "pad" {
            self.pipeline.pad = self.pad;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        self.chain_config(0.0, 1.0).tuning.validate()?;
        self.pipeline.validate()?;
        if self.schedule.thin == 0 {
            return Err(Error::Config("thin must be positive".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::Config("grid_points must be at least 2".into()));
        }
        if let (Some(a), Some(b)) = (self.lower, self.upper) {
            if a.partial_cmp(&b) != Some(std::cmp::Ordering::Less) {
                return Err(Error::Config(format!("lower bound {a} is not below upper bound {b}")));
            }
        }
        Ok(())
    }

    /// Chain settings for the support `[a, b]`.
    pub fn chain_config(&self, a: f64, b: f64) -> ChainConfig {
        let mut tuning = self.tuning.clone();
        tuning.tau1 = self.tau1.unwrap_or(TuningParams::for_bounds(a, b).tau1);
        ChainConfig {
            prior: self.prior.clone(),
            tuning,
            schedule: self.schedule,
            init: self.init.clone(),
        }
    }

    /// Support bounds: explicit values where given, otherwise the padded
    /// range of the data. Explicit bounds must cover every observation.
    pub fn bounds_for(&self, values: &[Option<f64>]) -> Result<(f64, f64)> {
        let (lo, hi) = padded_bounds(values, self.pad, self.lower)?;
        let (a, b) = (self.lower.unwrap_or(lo), self.upper.unwrap_or(hi));
        let outside = values.iter().flatten().find(|&&y| y < a || y > b);
        if let Some(y) = outside {
            return Err(Error::InvalidData(format!(
                "observation {y} lies outside the configured bounds [{a}, {b}]"
            )));
        }
        if a.partial_cmp(&b) != Some(std::cmp::Ordering::Less) {
            return Err(Error::InvalidData(format!("empty support [{a}, {b}]")));
        }
        Ok((a, b))
    }

    /// The configuration as a file that parses back to itself.
    pub fn to_text(&self) -> String {
        let t = &self.tuning;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("k_max", self.prior.k_max.to_string());
        put("eps1", self.prior.eps1.to_string());
        put("eps2", self.prior.eps2.to_string());
        put("zeta_shape", self.prior.zeta_shape.to_string());
        put("zeta_rate", self.prior.zeta_rate.to_string());
        put("tied_transitions", self.prior.tied_transitions.to_string());
        if let Some(x) = self.tau1 {
            put("tau1", x.to_string());
        }
        put("tau2", t.tau2.to_string());
        put("tau3", t.tau3.to_string());
        put("tau4", t.tau4.to_string());
        put("tau5", t.tau5.to_string());
        put("tau_w", t.tau_w.to_string());
        put("tau_rescale", t.tau_rescale.to_string());
        put("alpha", t.alpha.to_string());
        put("adapt", t.adapt.to_string());
        put("target_accept", t.target_accept.to_string());
        put("target_accept_scalar", t.target_accept_scalar.to_string());
        put(
            "coeff_blocking",
            match t.coeff_blocking {
                CoeffBlocking::Joint => "joint",
                CoeffBlocking::PerState => "per_state",
            }
            .into(),
        );
        put("burn_in", self.schedule.burn_in.to_string());
        put("iters", self.schedule.iters.to_string());
        put("thin", self.schedule.thin.to_string());
        put("check_every", self.schedule.check_every.unwrap_or(0).to_string());
        put("zero_inflated", self.init.zero_inflated.to_string());
        put(
            "anchors",
            self.init.anchors.as_deref().map_or("none".into(), join),
        );
        put("smoothing_half_width", self.init.smoothing_half_width.to_string());
        put("initial_knots", self.init.initial_knots.unwrap_or(0).to_string());
        put("em_iters", self.init.em_iters.to_string());
        if let Some(x) = self.lower {
            put("lower", x.to_string());
        }
        if let Some(x) = self.upper {
            put("upper", x.to_string());
        }
        put("pad", self.pad.to_string());
        put("grid_points", self.grid_points.to_string());
        put("candidates", join(&self.candidates));
        put("block", self.pipeline.block.to_string());
        put("main_candidates", join(&self.pipeline.main_candidates));
        put("min_dwell", self.pipeline.min_dwell.to_string());
        put("sub_states", self.pipeline.sub_states.to_string());
        put(
            "path_draws",
            match self.pipeline.path_mode {
                PathMode::PointEstimate => 0,
                PathMode::PosteriorDraws(m) => m,
            }
            .to_string(),
        );
        s
    }
}
