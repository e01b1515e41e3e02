//! Distillation and supervision losses.
//!
//! Every loss exists twice: as a plain function over probability vectors
//! (validated, used for reporting and as a reference), and as a builder that
//! records the same arithmetic on a [`Tape`] so it can be differentiated.
//! Both follow the same evaluation order, so they agree to rounding.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{Forward, PredictionBundle, SluModel};

/// Floor applied to probabilities before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

/// How far a probability vector may sum from 1 and still be accepted.
pub const DIST_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 0.1,
            lambda: 0.7,
            gamma: 0.3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let problems: Vec<String> = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
        ]
        .iter()
        .filter(|(_, w)| !(w.is_finite() && *w >= 0.0))
        .map(|(n, w)| format!("loss weight {n} must be finite and >= 0, got {w}"))
        .collect();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Weights with the intra and/or inter terms switched off.
    pub fn ablate(mut self, disable_intra: bool, disable_inter: bool) -> Self {
        if disable_intra {
            self.lambda = 0.0;
        }
        if disable_inter {
            self.gamma = 0.0;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_intent: f64,
    pub l_slot: f64,
    pub l_intra: f64,
    pub l_inter: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_components(l_intent: f64, l_slot: f64, l_intra: f64, l_inter: f64, w: &LossWeights) -> Self {
        Self {
            l_intent,
            l_slot,
            l_intra,
            l_inter,
            total: w.alpha * l_intent + w.beta * l_slot + w.lambda * l_intra + w.gamma * l_inter,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_intent, self.l_slot, self.l_intra, self.l_inter, self.total]
            .iter()
            .all(|x| x.is_finite())
    }
}

pub fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution("empty vector".into()));
    }
    if let Some(x) = p.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::InvalidDistribution(format!("entry {x} is not a probability")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > DIST_TOL {
        return Err(Error::InvalidDistribution(format!("entries sum to {s}")));
    }
    Ok(())
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .map(|(&pi, &mi)| pi * (pi.max(PROB_FLOOR).ln() - mi.max(PROB_FLOOR).ln()))
        .sum()
}

/// Jensen–Shannon divergence with the equal mixture and natural log.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("jsd", &[p.len()], &[q.len()]));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a + b) * 0.5).collect();
    Ok(0.5 * kl_to_mixture(p, &m) + 0.5 * kl_to_mixture(q, &m))
}

/// Mean position-wise JSD of two aligned sequences of distributions.
pub fn sequence_jsd(s1: &[Vec<f64>], s2: &[Vec<f64>]) -> Result<f64> {
    if s1.len() != s2.len() {
        return Err(Error::Alignment {
            left: s1.len(),
            right: s2.len(),
        });
    }
    if s1.is_empty() {
        return Err(Error::Empty("slot sequence"));
    }
    let total: f64 = s1.iter().zip(s2).map(|(a, b)| jsd(a, b)).sum::<Result<f64>>()?;
    Ok(total / s1.len() as f64)
}

pub fn intent_ce(dist: &[f64], gold: usize) -> Result<f64> {
    check_distribution(dist)?;
    let p = dist.get(gold).ok_or(Error::OutOfRange {
        what: "gold intent",
        index: gold,
        size: dist.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Summed (not averaged) token-level cross-entropy.
pub fn slot_ce(dists: &[Vec<f64>], gold: &[usize]) -> Result<f64> {
    if dists.len() != gold.len() {
        return Err(Error::Alignment {
            left: dists.len(),
            right: gold.len(),
        });
    }
    dists.iter().zip(gold).map(|(d, &g)| {
        check_distribution(d)?;
        let p = d.get(g).ok_or(Error::OutOfRange {
            what: "gold slot tag",
            index: g,
            size: d.len(),
        })?;
        Ok(-p.max(PROB_FLOOR).ln())
    })
    .sum()
}

pub fn intra_loss(o: &PredictionBundle, c: &PredictionBundle) -> Result<f64> {
    Ok(jsd(&o.intent_dist, &c.intent_dist)? + sequence_jsd(&o.slot_dists, &c.slot_dists)?)
}

/// Position-wise mean of a sequence of distributions.
pub fn average_distribution(dists: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = dists.first().ok_or(Error::Empty("slot sequence"))?;
    let mut acc = vec![0.0; first.len()];
    for d in dists {
        if d.len() != acc.len() {
            return Err(Error::shape("average_distribution", &[acc.len()], &[d.len()]));
        }
        acc.iter_mut().zip(d).for_each(|(a, x)| *a += x);
    }
    let inv = 1.0 / dists.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

fn inter_term(b: &PredictionBundle, m: &SluModel) -> Result<f64> {
    let avg = average_distribution(&b.slot_dists)?;
    jsd(&b.intent_dist, &m.project_slots_to_intent(&avg)?)
}

pub fn inter_loss(o: &PredictionBundle, c: &PredictionBundle, model_o: &SluModel, model_c: &SluModel) -> Result<f64> {
    Ok(inter_term(o, model_o)? + inter_term(c, model_c)?)
}

/// Everything the weighted objective needs for one utterance pair.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub bundle_o: &'a PredictionBundle,
    pub bundle_c: &'a PredictionBundle,
    pub model_o: &'a SluModel,
    pub model_c: &'a SluModel,
    pub gold_intent: usize,
    pub gold_slots: &'a [usize],
}

/// Weighted objective; the supervision terms sum both models' losses.
pub fn total_loss(inp: &LossInputs<'_>, w: &LossWeights) -> Result<LossBreakdown> {
    w.validate()?;
    let l_intent = intent_ce(&inp.bundle_o.intent_dist, inp.gold_intent)? + intent_ce(&inp.bundle_c.intent_dist, inp.gold_intent)?;
    let l_slot = slot_ce(&inp.bundle_o.slot_dists, inp.gold_slots)? + slot_ce(&inp.bundle_c.slot_dists, inp.gold_slots)?;
    let l_intra = intra_loss(inp.bundle_o, inp.bundle_c)?;
    let l_inter = inter_loss(inp.bundle_o, inp.bundle_c, inp.model_o, inp.model_c)?;
    Ok(LossBreakdown::from_components(l_intent, l_slot, l_intra, l_inter, w))
}

// ---- tape builders ----------------------------------------------------------

fn kl_to_mixture_on_tape(tape: &mut Tape<'_>, p: Var, log_m: Var) -> Result<Var> {
    let pc = tape.clamp_min(p, PROB_FLOOR);
    let log_p = tape.log(pc)?;
    let diff = tape.sub(log_p, log_m)?;
    let terms = tape.mul(p, diff)?;
    let axis = tape.shape(terms).len() - 1;
    tape.sum(terms, axis)
}

/// Row-wise JSD over the last axis; `[k]` inputs give a scalar, `[n, k]`
/// inputs give `[n]`.
pub fn jsd_on_tape(tape: &mut Tape<'_>, p: Var, q: Var) -> Result<Var> {
    if tape.shape(p) != tape.shape(q) || tape.shape(p).is_empty() {
        return Err(Error::shape("jsd", tape.shape(p), tape.shape(q)));
    }
    let s = tape.add(p, q)?;
    let m = tape.scale(s, 0.5);
    let mc = tape.clamp_min(m, PROB_FLOOR);
    let log_m = tape.log(mc)?;
    let kp = kl_to_mixture_on_tape(tape, p, log_m)?;
    let kq = kl_to_mixture_on_tape(tape, q, log_m)?;
    let a = tape.scale(kp, 0.5);
    let b = tape.scale(kq, 0.5);
    tape.add(a, b)
}

pub fn sequence_jsd_on_tape(tape: &mut Tape<'_>, s1: Var, s2: Var) -> Result<Var> {
    let (a, b) = (tape.shape(s1), tape.shape(s2));
    if a.len() == 2 && b.len() == 2 && a[0] != b[0] {
        return Err(Error::Alignment { left: a[0], right: b[0] });
    }
    let per = jsd_on_tape(tape, s1, s2)?;
    tape.mean(per, 0)
}

fn one_hot(shape: &[usize], gold: &[usize]) -> Result<Tensor> {
    let k = *shape.last().expect("non-scalar");
    let mut t = Tensor::zeros(shape.to_vec());
    for (row, &g) in gold.iter().enumerate() {
        if g >= k {
            return Err(Error::OutOfRange {
                what: "gold label",
                index: g,
                size: k,
            });
        }
        t.data_mut()[row * k + g] = 1.0;
    }
    Ok(t)
}

/// `-sum log p[gold]` over the rows of `probs` (`[k]` or `[n, k]`).
fn nll_on_tape(tape: &mut Tape<'_>, probs: Var, gold: &[usize]) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    let rows = if shape.len() == 1 { 1 } else { shape[0] };
    if rows != gold.len() {
        return Err(Error::Alignment {
            left: rows,
            right: gold.len(),
        });
    }
    let mask = tape.constant(one_hot(&shape, gold)?);
    let picked = tape.mul(probs, mask)?;
    let axis = shape.len() - 1;
    let p = tape.sum(picked, axis)?;
    let p = tape.clamp_min(p, PROB_FLOOR);
    let lp = tape.log(p)?;
    let s = tape.sum_all(lp)?;
    Ok(tape.scale(s, -1.0))
}

pub fn intent_ce_on_tape(tape: &mut Tape<'_>, probs: Var, gold: usize) -> Result<Var> {
    nll_on_tape(tape, probs, &[gold])
}

pub fn slot_ce_on_tape(tape: &mut Tape<'_>, probs: Var, gold: &[usize]) -> Result<Var> {
    nll_on_tape(tape, probs, gold)
}

/// Intent JSD plus mean slot JSD between the two models' distributions.
pub fn intra_on_tape(tape: &mut Tape<'_>, intent_o: Var, intent_c: Var, slots_o: Var, slots_c: Var) -> Result<Var> {
    let i = jsd_on_tape(tape, intent_o, intent_c)?;
    let s = sequence_jsd_on_tape(tape, slots_o, slots_c)?;
    tape.add(i, s)
}

/// One model's inter term: JSD between its intent distribution and the
/// projection of its averaged slot distribution.
pub fn inter_term_on_tape(tape: &mut Tape<'_>, model: &SluModel, f: &Forward) -> Result<Var> {
    let avg = tape.mean(f.slot_probs, 0)?;
    let proj = model.project_on_tape(tape, &f.params, avg)?;
    jsd_on_tape(tape, f.intent_probs, proj)
}

/// Handles of every component of the weighted objective on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_intent: Var,
    pub l_slot: Var,
    pub l_intra: Var,
    pub l_inter: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape<'_>) -> LossBreakdown {
        LossBreakdown {
            l_intent: tape.scalar(self.l_intent),
            l_slot: tape.scalar(self.l_slot),
            l_intra: tape.scalar(self.l_intra),
            l_inter: tape.scalar(self.l_inter),
            total: tape.scalar(self.total),
        }
    }
}

/// Records the full objective. Components with zero weight are still
/// computed (for logging) but left out of `total`, so they contribute no
/// gradient at all.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_on_tape(
    tape: &mut Tape<'_>,
    model_o: &SluModel,
    fo: &Forward,
    model_c: &SluModel,
    fc: &Forward,
    gold_intent: usize,
    gold_slots: &[usize],
    w: &LossWeights,
) -> Result<LossVars> {
    let io = intent_ce_on_tape(tape, fo.intent_probs, gold_intent)?;
    let ic = intent_ce_on_tape(tape, fc.intent_probs, gold_intent)?;
    let l_intent = tape.add(io, ic)?;
    let so = slot_ce_on_tape(tape, fo.slot_probs, gold_slots)?;
    let sc = slot_ce_on_tape(tape, fc.slot_probs, gold_slots)?;
    let l_slot = tape.add(so, sc)?;
    let l_intra = intra_on_tape(tape, fo.intent_probs, fc.intent_probs, fo.slot_probs, fc.slot_probs)?;
    let po = inter_term_on_tape(tape, model_o, fo)?;
    let pc = inter_term_on_tape(tape, model_c, fc)?;
    let l_inter = tape.add(po, pc)?;

    let mut total: Option<Var> = None;
    for (v, weight) in [(l_intent, w.alpha), (l_slot, w.beta), (l_intra, w.lambda), (l_inter, w.gamma)] {
        if weight == 0.0 {
            continue;
        }
        let term = tape.scale(v, weight);
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.scale(l_intent, 0.0),
    };
    Ok(LossVars {
        l_intent,
        l_slot,
        l_intra,
        l_inter,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    #[test]
    fn jsd_examples() {
        assert_eq!(jsd(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_abs_diff_eq!(jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(jsd(&[0.5, 0.5], &[0.9, 0.1]).unwrap(), 0.10175, epsilon = 1e-4);
        assert!(jsd(&[0.5, 0.5], &[1.0]).is_err());
        assert!(jsd(&[0.5, 0.6], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn sequence_mean() {
        let s1 = vec![vec![0.5, 0.5], vec![1.0, 0.0]];
        let s2 = vec![vec![0.5, 0.5], vec![0.0, 1.0]];
        assert_abs_diff_eq!(sequence_jsd(&s1, &s2).unwrap(), LN_2 / 2.0, epsilon = 1e-12);
        assert!(matches!(sequence_jsd(&s1, &s2[..1]), Err(Error::Alignment { .. })));
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(intent_ce(&[0.0, 1.0], 1).unwrap(), 0.0);
        assert_abs_diff_eq!(intent_ce(&[0.25; 4], 2).unwrap(), 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(intent_ce(&[0.7, 0.2, 0.1], 1).unwrap(), 1.609438, epsilon = 1e-6);
        assert!(intent_ce(&[0.5, 0.5], 2).is_err());
        let u = vec![1.0 / 13.0; 13];
        assert_abs_diff_eq!(slot_ce(&[u.clone(), u], &[0, 5]).unwrap(), 2.0 * 13f64.ln(), epsilon = 1e-12);
        let d = slot_ce(&[vec![0.5, 0.5], vec![0.25, 0.75]], &[0, 0]).unwrap();
        assert_abs_diff_eq!(d, 2.079442, epsilon = 1e-6);
        assert!(slot_ce(&[vec![1.0]], &[0, 0]).is_err());
    }

    #[test]
    fn tape_matches_values() {
        let p = vec![0.2, 0.5, 0.3, 0.1, 0.1, 0.8];
        let q = vec![0.6, 0.3, 0.1, 0.3, 0.3, 0.4];
        let mut tape = Tape::new();
        let pv = tape.leaf(Tensor::matrix(2, 3, p.clone()).unwrap());
        let qv = tape.leaf(Tensor::matrix(2, 3, q.clone()).unwrap());
        let s = sequence_jsd_on_tape(&mut tape, pv, qv).unwrap();
        let rows = |x: &[f64]| x.chunks(3).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let want = sequence_jsd(&rows(&p), &rows(&q)).unwrap();
        assert_abs_diff_eq!(tape.scalar(s), want, epsilon = 1e-12);
        let ce = slot_ce_on_tape(&mut tape, pv, &[1, 2]).unwrap();
        assert_abs_diff_eq!(tape.scalar(ce), slot_ce(&rows(&p), &[1, 2]).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn weights_are_linear() {
        let w = LossWeights::default();
        let b = LossBreakdown::from_components(1.0, 2.0, 3.0, 4.0, &w);
        assert_abs_diff_eq!(b.total, 0.9 + 0.2 + 2.1 + 1.2, epsilon = 1e-12);
        let w0 = w.ablate(true, true);
        assert_eq!(LossBreakdown::from_components(1.0, 2.0, 3.0, 4.0, &w0).total, 0.9 * 1.0 + 0.1 * 2.0);
        assert!(LossWeights { alpha: -1.0, ..w }.validate().is_err());
    }
}
