//! Two-level analysis of zero-inflated activity counts.
//!
//! A main HMM is fitted to a block-averaged series. Its Viterbi path, mapped
//! back to the original resolution, defines rest bouts and a conditioning
//! mask: every time point not decoded to the rest state (state 0, the
//! lowest emission mean after relabelling) is treated as missing, and a
//! sub-HMM is fitted to the masked high-resolution series.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{cumulative_probs, padded_bounds, smoothed_probs, viterbi, Dataset, HmmParams};
use crate::postproc::{linspace, relabel, summarize, Summary};
use crate::sampler::{derive_seed, fmt_num, run_chain, ChainConfig, Trace};
use crate::selection::{run_parallel, SelectionResult};

const SUMMARY_GRID: usize = 201;

/// How the conditioning paths of the sub-model are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathMode {
    /// One path from the posterior point estimate of the main model.
    PointEstimate,
    /// One path per posterior draw, for this many evenly spaced draws; the
    /// sub-model draws from all paths are pooled.
    PosteriorDraws(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Averaging factor from the high-resolution to the main series.
    pub block: usize,
    /// State counts tried for the main model; one value runs a single chain.
    pub main_candidates: Vec<usize>,
    /// Minimum sustained run, in high-resolution samples, that opens or
    /// closes a bout.
    pub min_dwell: usize,
    pub sub_states: usize,
    pub path_mode: PathMode,
    /// Relative padding of the upper support bound above the largest value.
    pub pad: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            block: 5,
            main_candidates: vec![2],
            min_dwell: 30,
            sub_states: 2,
            path_mode: PathMode::PointEstimate,
            pad: 0.05,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block == 0 || self.min_dwell == 0 || self.sub_states == 0 {
            return Err(Error::Config("block, min_dwell and sub_states must be positive".into()));
        }
        if self.main_candidates.is_empty() {
            return Err(Error::Config("at least one main state count is required".into()));
        }
        if let PathMode::PosteriorDraws(0) = self.path_mode {
            return Err(Error::Config("posterior path mode needs at least one draw".into()));
        }
        if self.pad.is_nan() || self.pad < 0.0 {
            return Err(Error::Config("pad must be non-negative".into()));
        }
        Ok(())
    }
}

/// Means over consecutive blocks of `block` values, ignoring missing ones.
/// A block with no present value is missing; a trailing partial block is
/// averaged over what it has.
pub fn block_average(values: &[Option<f64>], block: usize) -> Vec<Option<f64>> {
    values
        .chunks(block.max(1))
        .map(|chunk| {
            let present: Vec<f64> = chunk.iter().flatten().copied().collect();
            (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
        })
        .collect()
}

/// Repeats each block-level state `block` times, truncated to `n`.
pub fn expand_path(path: &[usize], block: usize, n: usize) -> Vec<usize> {
    path.iter()
        .flat_map(|&s| std::iter::repeat_n(s, block))
        .take(n)
        .collect()
}

/// A rest bout, inclusive at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bout {
    pub start: usize,
    pub end: usize,
}

impl Bout {
    pub fn duration(&self) -> usize {
        self.end + 1 - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoutSegmentation {
    pub bouts: Vec<Bout>,
    pub min_dwell: usize,
}

impl BoutSegmentation {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "start,end,duration")?;
        for b in &self.bouts {
            writeln!(w, "{},{},{}", b.start, b.end, b.duration())?;
        }
        Ok(())
    }
}

fn run_length(path: &[usize], from: usize, pred: impl Fn(usize) -> bool) -> usize {
    path[from..].iter().take_while(|&&s| pred(s)).count()
}

/// Rest bouts of state 0. A bout opens where a run of state 0 lasting at
/// least `min_dwell` begins and closes where a run of other states lasting
/// at least `min_dwell` begins; shorter interruptions stay inside the bout.
/// A bout still open at the end of the series ends at the last index.
pub fn extract_bouts(path: &[usize], min_dwell: usize) -> BoutSegmentation {
    let min_dwell = min_dwell.max(1);
    let mut bouts = Vec::new();
    let mut t = 0;
    while t < path.len() {
        let run = run_length(path, t, |s| s == 0);
        if run < min_dwell {
            t += run.max(1);
            continue;
        }
        let start = t;
        let mut u = t + run;
        let end = loop {
            if u >= path.len() {
                break path.len() - 1;
            }
            let awake = run_length(path, u, |s| s != 0);
            if awake >= min_dwell {
                break u - 1;
            }
            u += awake;
            u += run_length(path, u, |s| s == 0);
        };
        bouts.push(Bout { start, end });
        t = end + 1;
    }
    BoutSegmentation { bouts, min_dwell }
}

/// Support `[0, (1 + pad) * max]` for non-negative count data.
pub fn count_bounds(values: &[Option<f64>], pad: f64) -> Result<(f64, f64)> {
    if values.iter().flatten().any(|&y| y < 0.0) {
        return Err(Error::InvalidData("activity counts must be non-negative".into()));
    }
    padded_bounds(values, pad, Some(0.0))
}

fn zero_inflated(mut cfg: ChainConfig) -> ChainConfig {
    cfg.init.zero_inflated = true;
    cfg
}

fn point_estimate(trace: &Trace, bounds: (f64, f64)) -> Result<(Summary, HmmParams)> {
    let summary = summarize(trace, &linspace(bounds.0, bounds.1, SUMMARY_GRID))?;
    let est = summary.point_estimate()?;
    Ok((summary, est))
}

/// Result of the main fit. `trace` is relabelled so that state 0 has the
/// lowest emission mean.
#[derive(Debug, Clone)]
pub struct MainFit {
    pub data: Dataset,
    pub trace: Trace,
    pub selection: Option<SelectionResult>,
    pub summary: Summary,
    pub estimate: HmmParams,
}

/// Fits the zero-inflated main model to the block-averaged series.
/// `chain_for` builds the chain configuration for given support bounds.
pub fn fit_main<F>(
    values: &[Option<f64>],
    cfg: &PipelineConfig,
    chain_for: F,
    seed: u64,
    threads: usize,
) -> Result<MainFit>
where
    F: Fn(f64, f64) -> ChainConfig,
{
    cfg.validate()?;
    let averaged = block_average(values, cfg.block);
    let (a, b) = count_bounds(&averaged, cfg.pad)?;
    let data = Dataset::from_options(&averaged, a, b)?;
    let chain = zero_inflated(chain_for(a, b));
    let (trace, selection) = if let [n] = cfg.main_candidates[..] {
        (run_chain(&data, n, &chain, derive_seed(seed, 1000 + n as u64))?, None)
    } else {
        let traces = run_parallel(&data, &cfg.main_candidates, &chain, seed, threads)?;
        let result = SelectionResult::from_traces(&cfg.main_candidates, &traces, None)?;
        let best = result.best_by_probability();
        let idx = cfg.main_candidates.iter().position(|&n| n == best).expect("candidate");
        (traces.into_iter().nth(idx).expect("trace"), Some(result))
    };
    let trace = relabel(&trace);
    let (summary, estimate) = point_estimate(&trace, (a, b))?;
    Ok(MainFit {
        data,
        trace,
        selection,
        summary,
        estimate,
    })
}

/// Marks every time point not decoded to state 0 as missing.
pub fn conditioning_mask(path: &[usize]) -> Vec<bool> {
    path.iter().map(|&s| s != 0).collect()
}

/// The masked high-resolution dataset for a conditioning path.
pub fn masked_series(values: &[Option<f64>], path: &[usize], pad: f64) -> Result<Dataset> {
    if values.len() != path.len() {
        return Err(Error::InvalidData("path length differs from the series".into()));
    }
    let kept: Vec<Option<f64>> = values
        .iter()
        .zip(path)
        .map(|(&v, &s)| if s == 0 { v } else { None })
        .collect();
    if kept.iter().all(Option::is_none) {
        return Err(Error::EmptyConditioning);
    }
    let (a, b) = count_bounds(&kept, pad)?;
    Dataset::from_options(&kept, a, b)
}

#[derive(Debug, Clone)]
pub struct SubFit {
    /// Pooled, relabelled sub-model draws.
    pub trace: Trace,
    /// Masked series for the point-estimate path.
    pub data: Dataset,
    pub summary: Summary,
    pub estimate: HmmParams,
    /// Number of conditioning paths the draws were pooled over.
    pub n_paths: usize,
}

impl SubFit {
    /// Smoothed sub-state probabilities under the point estimate, on the
    /// point-estimate mask.
    pub fn state_probs(&self) -> Result<Vec<Vec<f64>>> {
        smoothed_probs(&self.estimate, &self.data)
    }
}

/// Fits the sub-model on the high-resolution series conditioned on the
/// main fit's decoded rest periods.
pub fn fit_sub<F>(
    values: &[Option<f64>],
    main: &MainFit,
    cfg: &PipelineConfig,
    chain_for: F,
    seed: u64,
    threads: usize,
) -> Result<SubFit>
where
    F: Fn(f64, f64) -> ChainConfig + Sync,
{
    cfg.validate()?;
    let n = values.len();
    let point_path = expand_path(&viterbi(&main.estimate, &main.data)?, cfg.block, n);
    let data = masked_series(values, &point_path, cfg.pad)?;
    let paths = match cfg.path_mode {
        PathMode::PointEstimate => vec![point_path],
        PathMode::PosteriorDraws(m) => {
            let draws = &main.trace.draws;
            (0..m)
                .map(|j| {
                    let d = &draws[j * draws.len() / m];
                    Ok(expand_path(&viterbi(&d.params, &main.data)?, cfg.block, n))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let traces = pool.install(|| {
        paths
            .par_iter()
            .enumerate()
            .map(|(j, path)| {
                let masked = masked_series(values, path, cfg.pad)?;
                let (a, b) = masked.bounds();
                let chain = zero_inflated(chain_for(a, b));
                run_chain(&masked, cfg.sub_states, &chain, derive_seed(seed, 2000 + j as u64))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let draws = traces.iter().flat_map(|t| relabel(t).draws).collect();
    let trace = Trace::from_draws(draws)?;
    let (summary, estimate) = point_estimate(&trace, data.bounds())?;
    Ok(SubFit {
        trace,
        data,
        summary,
        estimate,
        n_paths: paths.len(),
    })
}

/// Writes `t,conditioned,p_0..,cum_0..` rows of sub-state probabilities.
pub fn write_sub_probs<W: Write>(mut w: W, data: &Dataset, probs: &[Vec<f64>]) -> Result<()> {
    let n = probs.first().map_or(0, Vec::len);
    let mut header = String::from("t,conditioned");
    for prefix in ["p", "cum"] {
        for i in 0..n {
            header.push_str(&format!(",{prefix}_{i}"));
        }
    }
    writeln!(w, "{header}")?;
    for (t, (p, c)) in probs.iter().zip(cumulative_probs(probs)).enumerate() {
        let mut row = format!("{t},{}", u8::from(!data.missing()[t]));
        for x in p.iter().chain(&c) {
            row.push(',');
            row.push_str(&fmt_num(*x));
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// Everything the two-level analysis produces.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub main: MainFit,
    /// High-resolution main-state path from the main point estimate.
    pub path: Vec<usize>,
    pub bouts: BoutSegmentation,
    pub sub: SubFit,
}

/// Runs the main fit, bout extraction and sub fit in sequence.
pub fn run_pipeline<F>(
    values: &[Option<f64>],
    cfg: &PipelineConfig,
    chain_for: F,
    seed: u64,
    threads: usize,
) -> Result<PipelineResult>
where
    F: Fn(f64, f64) -> ChainConfig + Sync,
{
    let main = fit_main(values, cfg, &chain_for, derive_seed(seed, 3), threads)?;
    let path = expand_path(&viterbi(&main.estimate, &main.data)?, cfg.block, values.len());
    let bouts = extract_bouts(&path, cfg.min_dwell);
    let sub = fit_sub(values, &main, cfg, &chain_for, derive_seed(seed, 4), threads)?;
    Ok(PipelineResult {
        main,
        path,
        bouts,
        sub,
    })
}
