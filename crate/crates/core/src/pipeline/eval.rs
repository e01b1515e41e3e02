use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_report, macro_average, Decoded, Metrics, MetricsReport};
use crate::data::{tokenize, Example, LabelVocab, SubwordVocab};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Exec};
use crate::model::{Checkpoint, SluModel};

/// Argmax-decodes one utterance.
pub fn decode(model: &SluModel, labels: &LabelVocab, subwords: &SubwordVocab, ex: &Example) -> Result<Decoded> {
    let b = model.predict(&tokenize(ex, subwords))?;
    Ok(Decoded {
        intent: labels.intent_name(b.intent()).to_string(),
        slot_tags: b.slots().into_iter().map(|i| labels.slot_name(i).to_string()).collect(),
    })
}

/// Scores `model` on `corpus`. Labels outside the model's inventory are an
/// error rather than silently counted wrong.
pub fn evaluate(
    model: &SluModel,
    labels: &LabelVocab,
    subwords: &SubwordVocab,
    corpus: &[Example],
    mode: Exec,
) -> Result<MetricsReport> {
    if corpus.is_empty() {
        return Err(Error::Empty("evaluation corpus"));
    }
    for ex in corpus {
        labels.encode(ex)?;
    }
    let preds = try_map_indexed(mode, corpus, |_, ex| decode(model, labels, subwords, ex))?;
    compute_report(&preds, corpus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub per_language: BTreeMap<String, MetricsReport>,
    /// Unweighted mean over languages.
    pub macro_average: Metrics,
}

/// Evaluates the checkpoint's deployed model on each target corpus without
/// any parameter update.
pub fn zero_shot_eval(ck: &Checkpoint, corpora: &BTreeMap<String, Vec<Example>>, mode: Exec) -> Result<ZeroShotReport> {
    if corpora.is_empty() {
        return Err(Error::Empty("language set"));
    }
    let h = &ck.header;
    let per_language = corpora
        .iter()
        .map(|(lang, c)| Ok((lang.clone(), evaluate(ck.deployed(), &h.labels, &h.subwords, c, mode)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let macro_average = macro_average(per_language.values().map(|r| &r.all))?;
    Ok(ZeroShotReport {
        per_language,
        macro_average,
    })
}
