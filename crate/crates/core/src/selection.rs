//! Choosing the number of states from independent per-candidate chains.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::Dataset;
use crate::sampler::{derive_seed, log_sum_exp, run_chain, ChainConfig, Trace};

/// Runs one chain per candidate state count on up to `threads` workers
/// (`0` uses rayon's default). Chain `j` is seeded from `seed` and its
/// candidate value, so adding candidates does not change existing chains.
pub fn run_parallel(
    data: &Dataset,
    candidates: &[usize],
    cfg: &ChainConfig,
    seed: u64,
    threads: usize,
) -> Result<Vec<Trace>> {
    check_candidates(candidates)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        candidates
            .par_iter()
            .map(|&n| {
                run_chain(data, n, cfg, derive_seed(seed, 1000 + n as u64)).map_err(|e| {
                    Error::Candidate {
                        candidate: n,
                        source: Box::new(e),
                    }
                })
            })
            .collect()
    })
}

fn check_candidates(candidates: &[usize]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::Config("candidate set is empty".into()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) || sorted[0] == 0 {
        return Err(Error::Config(
            "candidates must be distinct positive state counts".into(),
        ));
    }
    Ok(())
}

/// Ensemble-average posterior model probabilities.
///
/// For each draw index `i` the candidate scores `log f(y|theta_k^(i)) +
/// log f(theta_k^(i)) + log P(N=k)` are normalized with log-sum-exp; the
/// resulting probabilities are averaged over `i`. `log_model_prior`
/// defaults to uniform.
pub fn posterior_model_probs(traces: &[Trace], log_model_prior: Option<&[f64]>) -> Result<Vec<f64>> {
    let first = traces.first().ok_or(Error::EmptyTrace)?;
    let t = first.len();
    if t == 0 {
        return Err(Error::EmptyTrace);
    }
    if traces.iter().any(|tr| tr.len() != t) {
        return Err(Error::DrawMismatch(format!(
            "traces have draw counts {:?}",
            traces.iter().map(Trace::len).collect::<Vec<_>>()
        )));
    }
    let m = traces.len();
    let uniform = vec![0.0; m];
    let prior = log_model_prior.unwrap_or(&uniform);
    if prior.len() != m {
        return Err(Error::Config("model prior length differs from the candidate count".into()));
    }
    let mut probs = vec![0.0; m];
    let mut scores = vec![0.0; m];
    for i in 0..t {
        for (k, tr) in traces.iter().enumerate() {
            let d = &tr.draws[i];
            scores[k] = d.loglik + d.logprior + prior[k];
        }
        let norm = log_sum_exp(&scores);
        for (p, s) in probs.iter_mut().zip(&scores) {
            *p += if norm.is_finite() { (s - norm).exp() } else { 1.0 / m as f64 };
        }
    }
    probs.iter_mut().for_each(|p| *p /= t as f64);
    Ok(probs)
}

/// `-(4/T) sum_i log f(y|theta^(i)) + 2 log f(y|theta_hat)`, where
/// `theta_hat` is the draw with the highest unnormalized posterior.
pub fn dic(trace: &Trace) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let t = trace.len() as f64;
    let mean_ll = trace.draws.iter().map(|d| d.loglik).sum::<f64>() / t;
    let best = trace
        .draws
        .iter()
        .max_by(|a, b| (a.loglik + a.logprior).total_cmp(&(b.loglik + b.logprior)))
        .expect("non-empty");
    Ok(-4.0 * mean_ll + 2.0 * best.loglik)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub candidates: Vec<usize>,
    pub post_probs: Vec<f64>,
    pub dic: Vec<f64>,
    /// Trace file written for each candidate, if any.
    pub trace_files: Vec<Option<String>>,
}

impl SelectionResult {
    pub fn from_traces(candidates: &[usize], traces: &[Trace], log_model_prior: Option<&[f64]>) -> Result<Self> {
        check_candidates(candidates)?;
        if candidates.len() != traces.len() {
            return Err(Error::DrawMismatch("one trace per candidate is required".into()));
        }
        Ok(Self {
            candidates: candidates.to_vec(),
            post_probs: posterior_model_probs(traces, log_model_prior)?,
            dic: traces.iter().map(dic).collect::<Result<_>>()?,
            trace_files: vec![None; candidates.len()],
        })
    }

    /// Candidate with the largest posterior probability.
    pub fn best_by_probability(&self) -> usize {
        let i = (0..self.candidates.len())
            .max_by(|&a, &b| self.post_probs[a].total_cmp(&self.post_probs[b]))
            .expect("non-empty");
        self.candidates[i]
    }

    /// Candidate with the smallest DIC.
    pub fn best_by_dic(&self) -> usize {
        let i = (0..self.candidates.len())
            .min_by(|&a, &b| self.dic[a].total_cmp(&self.dic[b]))
            .expect("non-empty");
        self.candidates[i]
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn table(&self) -> String {
        let mut s = String::from("    N   P(N|y)          DIC\n");
        for ((n, p), d) in self.candidates.iter().zip(&self.post_probs).zip(&self.dic) {
            let _ = writeln!(s, "{n:>5}   {p:<8.4}  {d:>12.3}");
        }
        let _ = writeln!(
            s,
            "best by probability: N={}, best by DIC: N={}",
            self.best_by_probability(),
            self.best_by_dic()
        );
        s
    }
}
