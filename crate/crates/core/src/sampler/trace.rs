use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{MoveKind, TuningParams};
use crate::error::{Error, Result};
use crate::hmm::HmmParams;
use crate::splines::{KnotConfig, SplineCoeffs};

/// One retained sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub sweep: usize,
    pub params: HmmParams,
    pub loglik: f64,
    pub logprior: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub kind: MoveKind,
    pub proposed: u64,
    pub accepted: u64,
}

impl MoveStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Thinned output of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub n_states: usize,
    pub draws: Vec<Draw>,
    /// Post-burn-in acceptance tallies.
    pub acceptance: Vec<MoveStats>,
    /// Proposal scales in force after burn-in.
    pub tuning: TuningParams,
}

#[derive(Serialize)]
struct JsonLine<'a> {
    #[serde(flatten)]
    draw: &'a Draw,
    k: usize,
    simplex: Vec<Vec<f64>>,
    delta_probs: Vec<f64>,
    gamma_probs: Vec<Vec<f64>>,
}

impl Trace {
    /// Wraps externally produced draws (e.g. read back from disk).
    pub fn from_draws(draws: Vec<Draw>) -> Result<Self> {
        let first = draws.first().ok_or(Error::EmptyTrace)?;
        let n_states = first.params.n_states();
        if draws.iter().any(|d| d.params.n_states() != n_states) {
            return Err(Error::DrawMismatch(
                "draws disagree on the number of states".into(),
            ));
        }
        Ok(Self {
            n_states,
            draws,
            acceptance: Vec::new(),
            tuning: TuningParams::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn loglik_series(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.loglik).collect()
    }

    pub fn logprior_series(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.logprior).collect()
    }

    pub fn k_series(&self) -> Vec<usize> {
        self.draws.iter().map(|d| d.params.knots.k()).collect()
    }

    pub fn zeta_series(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.params.zeta).collect()
    }

    /// Most frequent K; ties go to the smaller K.
    pub fn modal_k(&self) -> Option<usize> {
        let mut counts = std::collections::BTreeMap::new();
        for k in self.k_series() {
            *counts.entry(k).or_insert(0usize) += 1;
        }
        counts
            .into_iter()
            .fold(None, |best: Option<(usize, usize)>, (k, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((k, c)),
            })
            .map(|(k, _)| k)
    }

    pub fn acceptance_rate(&self, kind: MoveKind) -> Option<f64> {
        self.acceptance.iter().find(|s| s.kind == kind).map(MoveStats::rate)
    }

    /// Line-delimited JSON, one draw per line. Lossless: the unconstrained
    /// parameters are stored alongside derived probabilities.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for draw in &self.draws {
            let line = JsonLine {
                draw,
                k: draw.params.knots.k(),
                simplex: draw.params.coeffs.simplex(),
                delta_probs: draw.params.delta_probs(),
                gamma_probs: draw.params.gamma_rows(),
            };
            serde_json::to_writer(&mut w, &line).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut draws = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let draw: Draw = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            draw.params.validate().map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            draws.push(draw);
        }
        Self::from_draws(draws)
    }

    /// Flat CSV, one draw per row:
    /// `sweep,loglik,logprior,N,K,a,b,knots[K],simplex[N*(K+4)],delta[N],gamma[N*N],zeta,has_w,w[N]`.
    /// `delta` and `gamma` are normalized probabilities. Reading a row back
    /// gives parameters with the same likelihood, but the unconstrained
    /// scale is lost, so prefer JSONL for restarting chains.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# sweep,loglik,logprior,N,K,a,b,knots[K],simplex[N*(K+4)],delta[N],gamma[N*N],zeta,has_w,w[N]"
        )?;
        for d in &self.draws {
            let p = &d.params;
            let n = p.n_states();
            let mut fields = vec![
                d.sweep.to_string(),
                fmt_num(d.loglik),
                fmt_num(d.logprior),
                n.to_string(),
                p.knots.k().to_string(),
                fmt_num(p.knots.a()),
                fmt_num(p.knots.b()),
            ];
            fields.extend(p.knots.interior().iter().map(|&x| fmt_num(x)));
            fields.extend(p.coeffs.simplex().iter().flatten().map(|&x| fmt_num(x)));
            fields.extend(p.delta_probs().iter().map(|&x| fmt_num(x)));
            fields.extend(p.gamma_probs().iter().map(|&x| fmt_num(x)));
            fields.push(fmt_num(p.zeta));
            match &p.zero_weights {
                Some(wts) => {
                    fields.push("1".into());
                    fields.extend(wts.iter().map(|&x| fmt_num(x)));
                }
                None => fields.push("0".into()),
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut draws = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let draw = parse_csv_row(line).map_err(|message| Error::Parse {
                line: i + 1,
                message,
            })?;
            draws.push(draw);
        }
        Self::from_draws(draws)
    }
}

/// 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

struct Fields<'a> {
    items: std::str::Split<'a, char>,
}

impl Fields<'_> {
    fn raw(&mut self, what: &str) -> std::result::Result<&str, String> {
        self.items
            .next()
            .map(str::trim)
            .ok_or_else(|| format!("missing field {what}"))
    }

    fn num(&mut self, what: &str) -> std::result::Result<f64, String> {
        let s = self.raw(what)?;
        s.parse().map_err(|_| format!("bad {what}: {s:?}"))
    }

    fn int(&mut self, what: &str) -> std::result::Result<usize, String> {
        let s = self.raw(what)?;
        s.parse().map_err(|_| format!("bad {what}: {s:?}"))
    }

    fn nums(&mut self, count: usize, what: &str) -> std::result::Result<Vec<f64>, String> {
        (0..count).map(|_| self.num(what)).collect()
    }
}

fn parse_csv_row(line: &str) -> std::result::Result<Draw, String> {
    let mut f = Fields {
        items: line.split(','),
    };
    let sweep = f.int("sweep")?;
    let loglik = f.num("loglik")?;
    let logprior = f.num("logprior")?;
    let n = f.int("N")?;
    let k = f.int("K")?;
    let a = f.num("a")?;
    let b = f.num("b")?;
    let knots = f.nums(k, "knot")?;
    let simplex = f.nums(n * (k + 4), "coefficient")?;
    let delta = f.nums(n, "delta")?;
    let gamma = f.nums(n * n, "gamma")?;
    let zeta = f.num("zeta")?;
    let zero_weights = match f.int("has_w")? {
        0 => None,
        _ => Some(f.nums(n, "w")?),
    };
    if f.items.next().is_some() {
        return Err("too many fields".into());
    }
    let knots = KnotConfig::new(a, b, knots).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = simplex.chunks(k + 4).map(<[f64]>::to_vec).collect();
    let coeffs = SplineCoeffs::from_simplex_rows(&rows).map_err(|e| e.to_string())?;
    let params = HmmParams {
        knots,
        coeffs,
        delta,
        gamma,
        zeta,
        zero_weights,
    };
    params.validate().map_err(|e| e.to_string())?;
    Ok(Draw {
        sweep,
        params,
        loglik,
        logprior,
    })
}
