//! Intent accuracy, span-level slot F1 and sentence-level overall accuracy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{parse_bio, Bio, Example};
use crate::error::{Error, Result};

/// A labelled span over word positions, `end` inclusive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// Extracts spans from a BIO sequence. An `I-X` that does not continue an
/// open `X` span opens a new one, as conlleval does.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> Result<Vec<Span>> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, t) in tags.iter().enumerate() {
        let tag = parse_bio(t.as_ref())?;
        match tag {
            Bio::Inside(l) if open.is_some_and(|(_, o)| o == l) => continue,
            _ => {}
        }
        if let Some((s, l)) = open.take() {
            spans.push(Span {
                start: s,
                end: i - 1,
                label: l.to_string(),
            });
        }
        if let Bio::Begin(l) | Bio::Inside(l) = tag {
            open = Some((i, l));
        }
    }
    if let Some((s, l)) = open {
        spans.push(Span {
            start: s,
            end: tags.len() - 1,
            label: l.to_string(),
        });
    }
    Ok(spans)
}

fn check_lengths(what: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Alignment { left: a, right: b });
    }
    if a == 0 {
        return Err(Error::Empty(what));
    }
    Ok(())
}

pub fn intent_accuracy<T: PartialEq>(preds: &[T], golds: &[T]) -> Result<f64> {
    check_lengths("intent predictions", preds.len(), golds.len())?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Span counts behind a micro-averaged F1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpanCounts {
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl SpanCounts {
    pub fn f1(&self) -> f64 {
        let p = if self.predicted == 0 { 0.0 } else { self.correct as f64 / self.predicted as f64 };
        let r = if self.gold == 0 { 0.0 } else { self.correct as f64 / self.gold as f64 };
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

pub fn span_counts<S: AsRef<str>>(pred: &[Vec<S>], gold: &[Vec<S>]) -> Result<SpanCounts> {
    if pred.len() != gold.len() {
        return Err(Error::Alignment {
            left: pred.len(),
            right: gold.len(),
        });
    }
    let mut c = SpanCounts::default();
    for (p, g) in pred.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(Error::Alignment {
                left: p.len(),
                right: g.len(),
            });
        }
        let ps = extract_spans(p)?;
        let gs = extract_spans(g)?;
        c.predicted += ps.len();
        c.gold += gs.len();
        c.correct += ps.iter().filter(|s| gs.contains(s)).count();
    }
    Ok(c)
}

/// Micro-averaged span F1 over exact `(start, end, label)` matches.
pub fn span_f1<S: AsRef<str>>(pred: &[Vec<S>], gold: &[Vec<S>]) -> Result<f64> {
    Ok(span_counts(pred, gold)?.f1())
}

/// Fraction of utterances whose intent and whole tag sequence both match.
pub fn overall_accuracy<I: PartialEq, S: PartialEq>(preds: &[(I, Vec<S>)], golds: &[(I, Vec<S>)]) -> Result<f64> {
    check_lengths("predictions", preds.len(), golds.len())?;
    let mut hits = 0;
    for ((pi, ps), (gi, gs)) in preds.iter().zip(golds) {
        if ps.len() != gs.len() {
            return Err(Error::Alignment {
                left: ps.len(),
                right: gs.len(),
            });
        }
        if pi == gi && ps == gs {
            hits += 1;
        }
    }
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub intent_accuracy: f64,
    pub slot_f1: f64,
    pub overall_accuracy: f64,
    /// Fraction of utterances with the whole tag sequence right.
    pub slot_exact_match: f64,
    pub n_examples: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub all: Metrics,
    pub per_language: BTreeMap<String, Metrics>,
}

impl MetricsReport {
    pub fn intent_accuracy(&self) -> f64 {
        self.all.intent_accuracy
    }

    pub fn slot_f1(&self) -> f64 {
        self.all.slot_f1
    }

    pub fn overall_accuracy(&self) -> f64 {
        self.all.overall_accuracy
    }
}

/// Decoded output for one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub intent: String,
    pub slot_tags: Vec<String>,
}

fn metrics_for(preds: &[&Decoded], golds: &[&Example]) -> Result<Metrics> {
    let pi: Vec<&str> = preds.iter().map(|p| p.intent.as_str()).collect();
    let gi: Vec<&str> = golds.iter().map(|g| g.intent.as_str()).collect();
    let ps: Vec<Vec<&str>> = preds.iter().map(|p| p.slot_tags.iter().map(String::as_str).collect()).collect();
    let gs: Vec<Vec<&str>> = golds.iter().map(|g| g.slot_tags.iter().map(String::as_str).collect()).collect();
    let exact = ps.iter().zip(&gs).filter(|(p, g)| p == g).count() as f64 / preds.len().max(1) as f64;
    let pairs_p: Vec<(&str, Vec<&str>)> = pi.iter().copied().zip(ps.iter().cloned()).collect();
    let pairs_g: Vec<(&str, Vec<&str>)> = gi.iter().copied().zip(gs.iter().cloned()).collect();
    Ok(Metrics {
        intent_accuracy: intent_accuracy(&pi, &gi)?,
        slot_f1: span_f1(&ps, &gs)?,
        overall_accuracy: overall_accuracy(&pairs_p, &pairs_g)?,
        slot_exact_match: exact,
        n_examples: preds.len(),
    })
}

/// Scores decoded predictions against gold examples, overall and by the
/// gold examples' language field.
pub fn compute_report(preds: &[Decoded], golds: &[Example]) -> Result<MetricsReport> {
    check_lengths("evaluation corpus", preds.len(), golds.len())?;
    let all = metrics_for(&preds.iter().collect::<Vec<_>>(), &golds.iter().collect::<Vec<_>>())?;
    let mut groups: BTreeMap<&str, (Vec<&Decoded>, Vec<&Example>)> = BTreeMap::new();
    for (p, g) in preds.iter().zip(golds) {
        let e = groups.entry(&g.language).or_default();
        e.0.push(p);
        e.1.push(g);
    }
    let per_language = groups
        .into_iter()
        .map(|(l, (p, g))| Ok((l.to_string(), metrics_for(&p, &g)?)))
        .collect::<Result<_>>()?;
    Ok(MetricsReport { all, per_language })
}

/// Unweighted mean of each metric across reports.
pub fn macro_average<'r>(reports: impl IntoIterator<Item = &'r Metrics>) -> Result<Metrics> {
    let rs: Vec<&Metrics> = reports.into_iter().collect();
    if rs.is_empty() {
        return Err(Error::Empty("language set"));
    }
    let n = rs.len() as f64;
    let mean = |f: fn(&Metrics) -> f64| rs.iter().map(|m| f(m)).sum::<f64>() / n;
    Ok(Metrics {
        intent_accuracy: mean(|m| m.intent_accuracy),
        slot_f1: mean(|m| m.slot_f1),
        overall_accuracy: mean(|m| m.overall_accuracy),
        slot_exact_match: mean(|m| m.slot_exact_match),
        n_examples: rs.iter().map(|m| m.n_examples).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(tags: &[&str]) -> Vec<String> {
        tags.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn spans_with_repair() {
        let s = extract_spans(&["B-a", "I-a", "O", "I-b", "I-b", "B-a", "I-c"]).unwrap();
        let got: Vec<(usize, usize, &str)> = s.iter().map(|s| (s.start, s.end, s.label.as_str())).collect();
        assert_eq!(got, [(0, 1, "a"), (3, 4, "b"), (5, 5, "a"), (6, 6, "c")]);
        assert!(extract_spans(&["X-a"]).is_err());
    }

    #[test]
    fn f1_examples() {
        let g = vec![v(&["B-a", "O", "O"])];
        assert_eq!(span_f1(&g, &g).unwrap(), 1.0);
        assert_eq!(span_f1(&[v(&["O", "O", "O"])], &g).unwrap(), 0.0);
        assert_eq!(span_f1(&[v(&["B-a", "I-a", "O"])], &g).unwrap(), 0.0);
        assert_eq!(span_f1(&[v(&["O"])], &[v(&["O"])]).unwrap(), 0.0);
    }

    #[test]
    fn accuracies() {
        assert_eq!(intent_accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(intent_accuracy::<u8>(&[], &[]).is_err());
        let g: Vec<(u8, Vec<u8>)> = (0..5).map(|i| (i, vec![i])).collect();
        let mut p = g.clone();
        p[0].0 = 9;
        p[1].1[0] = 9;
        p[2].0 = 9;
        assert_eq!(overall_accuracy(&p, &g).unwrap(), 0.4);
    }

    #[test]
    fn mixed_report() {
        let ex = |w: &[&str], t: &[&str], i: &str, l: &str| {
            Example::new(w.iter().map(|s| s.to_string()).collect(), v(t), i, l).unwrap()
        };
        let golds = vec![
            ex(&["a", "b"], &["B-x", "I-x"], "i1", "en"),
            ex(&["c"], &["B-y"], "i2", "en"),
            ex(&["d", "e"], &["O", "B-x"], "i1", "de"),
            ex(&["f"], &["O"], "i2", "de"),
        ];
        let dec = |i: &str, t: &[&str]| Decoded {
            intent: i.into(),
            slot_tags: v(t),
        };
        let preds = vec![
            dec("i1", &["B-x", "I-x"]), // fully right
            dec("i1", &["B-y"]),        // intent wrong
            dec("i1", &["O", "B-y"]),   // slot wrong
            dec("i2", &["O"]),          // fully right
        ];
        let r = compute_report(&preds, &golds).unwrap();
        assert_eq!(r.all.intent_accuracy, 0.75);
        assert_eq!(r.all.overall_accuracy, 0.5);
        assert_eq!(r.all.slot_exact_match, 0.75);
        // 3 gold spans, 3 predicted, 2 correct.
        assert!((r.all.slot_f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_language["en"].intent_accuracy, 0.5);
        assert_eq!(r.per_language["de"].overall_accuracy, 0.5);
        assert_eq!(r.per_language["de"].slot_f1, 0.0);
    }
}
