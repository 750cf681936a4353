//! Historic dialogue retrieval: pick the prior QA pairs relevant to the current
//! question and decide whether the question is answerable from text alone.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::{HistoryItem, ProviderError, RetrievalModel};
use crate::text;

pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.3;
/// Top overlap must exceed this for the fallback to raise the text-only flag.
pub const RECALL_OVERLAP: f64 = 0.8;
pub const RECALL_CUES: [&str; 3] = ["what did i ask", "how did you respond", "you said"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("history entry {0} duplicates an existing id")]
    DuplicateId(u32),
    #[error("history entry {0} is asked before the previous entry")]
    OutOfOrder(u32),
    #[error("cannot parse `{raw}`: {reason}")]
    Parse { raw: String, reason: String },
    #[error("retrieval model {model} failed: {source}")]
    Provider { model: String, source: ProviderError },
    #[error("retrieval model {model} reply unusable after retry: {reason}; raw reply `{raw}`")]
    Unparseable { model: String, raw: String, reason: String },
    #[error("id {0} is not in the history")]
    UnknownId(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub qa_id: u32,
    pub question: String,
    pub answer: String,
    pub asked_at: f64,
}

/// Dialogue so far, in ask order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DialogueHistory {
    entries: Vec<HistoryEntry>,
}

impl DialogueHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = HistoryEntry>) -> Result<Self, RetrievalError> {
        let mut h = Self::new();
        for e in entries {
            h.push(e)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, entry: HistoryEntry) -> Result<(), RetrievalError> {
        if self.entries.iter().any(|e| e.qa_id == entry.qa_id) {
            return Err(RetrievalError::DuplicateId(entry.qa_id));
        }
        if self.entries.last().is_some_and(|l| entry.asked_at < l.asked_at) {
            return Err(RetrievalError::OutOfOrder(entry.qa_id));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> BTreeSet<u32> {
        self.entries.iter().map(|e| e.qa_id).collect()
    }

    pub fn get(&self, qa_id: u32) -> Option<&HistoryEntry> {
        self.entries.iter().find(|e| e.qa_id == qa_id)
    }

    pub fn items(&self) -> Vec<HistoryItem> {
        self.entries
            .iter()
            .map(|e| HistoryItem { id: e.qa_id, question: e.question.clone(), answer: e.answer.clone() })
            .collect()
    }
}

mod flag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*v as u8)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("delta must be 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalOutput {
    pub selected_ids: BTreeSet<u32>,
    /// Question is answerable from the dialogue alone; serialized as 0/1.
    #[serde(with = "flag")]
    pub delta: bool,
}

impl RetrievalOutput {
    pub fn new(selected_ids: impl IntoIterator<Item = u32>, delta: bool) -> Self {
        Self { selected_ids: selected_ids.into_iter().collect(), delta }
    }

    /// Constrained-grammar form, e.g. `delta=0;selected=1,4`.
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for RetrievalOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "delta={};selected=", self.delta as u8)?;
        for (i, id) in self.selected_ids.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{id}")?;
        }
        Ok(())
    }
}

/// Parses `delta=<0|1>;selected=<id(,id)*>` where the id list may be empty or
/// `∅`. Whitespace anywhere is ignored, duplicate ids collapse, and ids that
/// are not in `history` are rejected.
pub fn parse_constrained(text: &str, history: &DialogueHistory) -> Result<RetrievalOutput, RetrievalError> {
    let err = |reason: &str| RetrievalError::Parse { raw: text.to_string(), reason: reason.to_string() };
    let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let rest = compact.strip_prefix("delta=").ok_or_else(|| err("expected `delta=`"))?;
    let (delta, rest) = match rest.as_bytes().first() {
        Some(b'0') => (false, &rest[1..]),
        Some(b'1') => (true, &rest[1..]),
        _ => return Err(err("delta must be 0 or 1")),
    };
    let list = rest.strip_prefix(";selected=").ok_or_else(|| err("expected `;selected=`"))?;
    let mut selected = BTreeSet::new();
    if !(list.is_empty() || list == "∅") {
        let known = history.ids();
        for tok in list.split(',') {
            if tok.is_empty() || !tok.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err(&format!("`{tok}` is not an id")));
            }
            let id: u32 = tok.parse().map_err(|_| err(&format!("`{tok}` is out of range")))?;
            if !known.contains(&id) {
                return Err(err(&format!("id {id} is not in the history")));
            }
            selected.insert(id);
        }
    }
    Ok(RetrievalOutput { selected_ids: selected, delta })
}

/// Anything that can pick context for a question.
pub trait Retriever: Send + Sync {
    fn id(&self) -> &str;
    fn retrieve(&self, history: &DialogueHistory, question: &str) -> Result<RetrievalOutput, RetrievalError>;
}

/// Asks a retrieval model and parses its constrained reply, retrying once on
/// a malformed reply.
pub fn retrieve(
    history: &DialogueHistory,
    question: &str,
    model: &dyn RetrievalModel,
) -> Result<RetrievalOutput, RetrievalError> {
    let items = history.items();
    let mut last = None;
    for attempt in 0..2 {
        let raw = model
            .complete(&items, question)
            .map_err(|source| RetrievalError::Provider { model: model.id().to_string(), source })?;
        match parse_constrained(&raw, history) {
            Ok(out) => return Ok(out),
            Err(RetrievalError::Parse { reason, .. }) => {
                log::warn!("retrieval reply attempt {} unparseable: {reason}", attempt + 1);
                last = Some((raw, reason));
            }
            Err(e) => return Err(e),
        }
    }
    let (raw, reason) = last.expect("loop ran");
    Err(RetrievalError::Unparseable { model: model.id().to_string(), raw, reason })
}

pub struct ModelRetriever<M> {
    pub model: M,
}

impl<M: RetrievalModel> Retriever for ModelRetriever<M> {
    fn id(&self) -> &str {
        self.model.id()
    }

    fn retrieve(&self, history: &DialogueHistory, question: &str) -> Result<RetrievalOutput, RetrievalError> {
        retrieve(history, question, &self.model)
    }
}

/// Term-overlap stand-in for a trained retrieval model.
///
/// An item is selected when the term-frequency cosine between the question and
/// the item's question plus answer reaches `threshold`. The text-only flag is
/// raised when the best overlap exceeds [`RECALL_OVERLAP`] and the question
/// contains one of [`RECALL_CUES`].
pub fn lexical_fallback(history: &DialogueHistory, question: &str, threshold: f64) -> RetrievalOutput {
    let overlaps: Vec<(u32, f64)> = history
        .entries()
        .iter()
        .map(|e| (e.qa_id, text::tf_cosine(question, &format!("{} {}", e.question, e.answer))))
        .collect();
    let selected = overlaps.iter().filter(|(_, o)| *o >= threshold).map(|(id, _)| *id).collect();
    let top = overlaps.iter().map(|(_, o)| *o).fold(0.0, f64::max);
    let normalized = text::normalize(question);
    let cued = RECALL_CUES.iter().any(|c| normalized.contains(c));
    RetrievalOutput { selected_ids: selected, delta: top > RECALL_OVERLAP && cued }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LexicalRetriever {
    pub threshold: f64,
}

impl Default for LexicalRetriever {
    fn default() -> Self {
        Self { threshold: DEFAULT_OVERLAP_THRESHOLD }
    }
}

impl Retriever for LexicalRetriever {
    fn id(&self) -> &str {
        "fallback-lexical"
    }

    fn retrieve(&self, history: &DialogueHistory, question: &str) -> Result<RetrievalOutput, RetrievalError> {
        Ok(lexical_fallback(history, question, self.threshold))
    }
}

/// Confusion counts of a selection over history items.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_, tn: self.tn + o.tn }
    }
}

impl std::iter::Sum for Confusion {
    fn sum<I: Iterator<Item = Confusion>>(iter: I) -> Self {
        iter.fold(Confusion::default(), |a, b| a + b)
    }
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Confusion,
}

impl RetrievalMetrics {
    /// Metrics from (possibly summed) counts. An empty prediction has
    /// precision 1 only if nothing was missed; an empty gold set has recall 1
    /// only if nothing was predicted. An empty history has accuracy 1.
    pub fn from_counts(c: Confusion) -> Self {
        let ratio = |num: u64, den: u64| num as f64 / den as f64;
        let precision = if c.tp + c.fp == 0 { (c.fn_ == 0) as u8 as f64 } else { ratio(c.tp, c.tp + c.fp) };
        let recall = if c.tp + c.fn_ == 0 { (c.fp == 0) as u8 as f64 } else { ratio(c.tp, c.tp + c.fn_) };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        let accuracy = if c.total() == 0 { 1.0 } else { ratio(c.tp + c.tn, c.total()) };
        Self { accuracy, precision, recall, f1, counts: c }
    }
}

pub fn confusion(
    predicted: &BTreeSet<u32>,
    gold: &BTreeSet<u32>,
    history_ids: &BTreeSet<u32>,
) -> Result<Confusion, RetrievalError> {
    if let Some(&bad) = predicted.iter().chain(gold).find(|id| !history_ids.contains(id)) {
        return Err(RetrievalError::UnknownId(bad));
    }
    let tp = predicted.intersection(gold).count() as u64;
    let fp = predicted.len() as u64 - tp;
    let fn_ = gold.len() as u64 - tp;
    Ok(Confusion { tp, fp, fn_, tn: history_ids.len() as u64 - tp - fp - fn_ })
}

pub fn score_retrieval(
    predicted: &RetrievalOutput,
    gold: &BTreeSet<u32>,
    history_ids: &BTreeSet<u32>,
) -> Result<RetrievalMetrics, RetrievalError> {
    Ok(RetrievalMetrics::from_counts(confusion(&predicted.selected_ids, gold, history_ids)?))
}

/// Micro-averaged metrics over many questions.
pub fn micro_average<I: IntoIterator<Item = Confusion>>(counts: I) -> RetrievalMetrics {
    RetrievalMetrics::from_counts(counts.into_iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::cell::Cell;
    use std::sync::Mutex;

    fn entry(id: u32, q: &str, a: &str, t: f64) -> HistoryEntry {
        HistoryEntry { qa_id: id, question: q.into(), answer: a.into(), asked_at: t }
    }

    fn history(n: u32) -> DialogueHistory {
        DialogueHistory::from_entries((1..=n).map(|i| entry(i, &format!("q{i}"), &format!("a{i}"), i as f64))).unwrap()
    }

    fn ids(v: &[u32]) -> BTreeSet<u32> {
        v.iter().copied().collect()
    }

    #[test]
    fn history_invariants() {
        let mut h = history(2);
        assert_eq!(h.push(entry(2, "", "", 5.0)), Err(RetrievalError::DuplicateId(2)));
        assert_eq!(h.push(entry(3, "", "", 0.5)), Err(RetrievalError::OutOfOrder(3)));
    }

    #[test]
    fn parse_examples() {
        let h = history(5);
        assert_eq!(parse_constrained("delta=0;selected=1,4", &h).unwrap(), RetrievalOutput::new([1, 4], false));
        assert_eq!(parse_constrained("delta=1;selected=", &h).unwrap(), RetrievalOutput::new([], true));
        assert_eq!(parse_constrained(" delta = 1 ;\n selected = ∅ ", &h).unwrap(), RetrievalOutput::new([], true));
        assert_eq!(parse_constrained("delta=0;selected=3,3,1", &h).unwrap(), RetrievalOutput::new([1, 3], false));
        for bad in [
            "maybe 3?",
            "delta=2;selected=1",
            "delta=0;selected=1,,2",
            "delta=0;selected=9",
            "delta=0;selected=-1",
            "delta=0",
            "delta=0;selected=1;x",
        ] {
            assert!(matches!(parse_constrained(bad, &h), Err(RetrievalError::Parse { .. })), "{bad}");
        }
    }

    struct Scripted {
        replies: Mutex<Vec<Result<String, ProviderError>>>,
        calls: Mutex<Cell<usize>>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<&str, ProviderError>>) -> Self {
            let mut replies: Vec<_> = replies.into_iter().map(|r| r.map(String::from)).collect();
            replies.reverse();
            Self { replies: Mutex::new(replies), calls: Mutex::new(Cell::new(0)) }
        }

        fn calls(&self) -> usize {
            self.calls.lock().unwrap().get()
        }
    }

    impl RetrievalModel for Scripted {
        fn id(&self) -> &str {
            "scripted"
        }
        fn complete(&self, history: &[HistoryItem], _: &str) -> Result<String, ProviderError> {
            let c = self.calls.lock().unwrap();
            c.set(c.get() + 1);
            assert!(history.windows(2).all(|w| w[0].id < w[1].id));
            self.replies.lock().unwrap().pop().unwrap()
        }
    }

    #[test]
    fn provider_retrieval_and_retry() {
        let h = history(4);
        let m = Scripted::new(vec![Ok("delta=1;selected=3")]);
        assert_eq!(retrieve(&h, "q", &m).unwrap(), RetrievalOutput::new([3], true));

        let m = Scripted::new(vec![Ok("uh"), Ok("delta=0;selected=2")]);
        assert_eq!(retrieve(&h, "q", &m).unwrap(), RetrievalOutput::new([2], false));
        assert_eq!(m.calls(), 2);

        let m = Scripted::new(vec![Ok("uh"), Ok("still no")]);
        match retrieve(&h, "q", &m) {
            Err(RetrievalError::Unparseable { raw, .. }) => assert_eq!(raw, "still no"),
            other => panic!("{other:?}"),
        }

        let m = Scripted::new(vec![Err(ProviderError::Transport("down".into()))]);
        assert!(matches!(retrieve(&h, "q", &m), Err(RetrievalError::Provider { .. })));

        let m = Scripted::new(vec![Ok("delta=1;selected=")]);
        assert_eq!(retrieve(&DialogueHistory::new(), "q", &m).unwrap(), RetrievalOutput::new([], true));
    }

    #[test]
    fn lexical_examples() {
        assert_eq!(lexical_fallback(&DialogueHistory::new(), "anything", 0.3), RetrievalOutput::default());

        let h = DialogueHistory::from_entries([
            entry(1, "What is the chef holding?", "A green knife.", 10.0),
            entry(2, "Where was the dog running?", "Across a field.", 20.0),
        ])
        .unwrap();
        assert_eq!(lexical_fallback(&h, "What is the chef holding?", 0.3).selected_ids, ids(&[1]));
        assert_eq!(lexical_fallback(&h, "zebra xylophone", 0.3), RetrievalOutput::default());
    }

    #[test]
    fn lexical_threshold_selection_matches_direct_overlap() {
        let h = DialogueHistory::from_entries([
            entry(1, "red car parked street", "red car", 1.0),
            entry(2, "dog runs", "across field", 2.0),
            entry(3, "the car", "blue sky cloud rain", 3.0),
        ])
        .unwrap();
        let q = "red car street";
        // term-frequency cosine evaluated by hand:
        //   item1 tf {red:2, car:2, parked:1, street:1}, |.|=sqrt(10); dot with q = 2+2+1 = 5
        //   item2 shares nothing
        //   item3 tf {the, car, blue, sky, cloud, rain}, |.|=sqrt(6); dot = 1
        let o1 = 5.0 / (3f64.sqrt() * 10f64.sqrt());
        let o3 = 1.0 / (3f64.sqrt() * 6f64.sqrt());
        assert!((text::tf_cosine(q, "red car parked street red car") - o1).abs() < 1e-12);
        assert!(o1 > 0.9 && o3 < 0.3);
        assert_eq!(lexical_fallback(&h, q, 0.3).selected_ids, ids(&[1]));
        assert_eq!(lexical_fallback(&h, q, 0.2).selected_ids, ids(&[1, 3]));
    }

    #[test]
    fn recall_cue_raises_flag() {
        let h = DialogueHistory::from_entries([
            entry(1, "What is the woman slicing on the wooden board near the window", "Onions", 5.0),
            entry(2, "Where is the pan", "On the stove", 9.0),
            entry(3, "What colour is the apron", "Blue", 12.0),
        ])
        .unwrap();
        let q = "What did I ask about the woman slicing onions on the wooden board near the window";
        let overlaps: Vec<f64> =
            h.entries().iter().map(|e| text::tf_cosine(q, &format!("{} {}", e.question, e.answer))).collect();
        // 0.880, 0.497, 0.348 by direct term counting
        assert!((overlaps[0] - 0.8804).abs() < 1e-4);
        let out = lexical_fallback(&h, q, DEFAULT_OVERLAP_THRESHOLD);
        assert_eq!(out.selected_ids, ids(&[1, 2, 3]));
        assert!(out.delta);

        // high overlap without a cue keeps the flag down
        assert!(!lexical_fallback(&h, "what is the woman slicing on the wooden board near the window", 0.3).delta);
        // a cue without a strong match does too
        assert!(!lexical_fallback(&h, "what did I ask about the pan", 0.3).delta);
    }

    #[test]
    fn metric_examples() {
        let h = ids(&[1, 2, 3, 4, 5]);
        let m = score_retrieval(&RetrievalOutput::new([2, 3], false), &ids(&[2, 3]), &h).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));

        let m = score_retrieval(&RetrievalOutput::new([1, 2], false), &ids(&[2, 3]), &h).unwrap();
        assert_eq!(m.counts, Confusion { tp: 1, fp: 1, fn_: 1, tn: 2 });
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (0.6, 0.5, 0.5, 0.5));

        let m = score_retrieval(&RetrievalOutput::default(), &BTreeSet::new(), &ids(&[1, 2, 3, 4])).unwrap();
        assert_eq!((m.accuracy, m.f1), (1.0, 1.0));

        assert_eq!(
            score_retrieval(&RetrievalOutput::new([9], false), &BTreeSet::new(), &h),
            Err(RetrievalError::UnknownId(9))
        );
    }

    #[test]
    fn micro_average_sums_counts() {
        let m = micro_average([Confusion { tp: 1, fp: 1, fn_: 1, tn: 2 }, Confusion { tp: 2, fp: 0, fn_: 0, tn: 3 }]);
        assert_eq!((m.precision, m.recall), (0.75, 0.75));
        assert_eq!(m.accuracy, 0.8);
    }

    #[test]
    fn delta_serializes_as_integer() {
        let json = serde_json::to_string(&RetrievalOutput::new([3, 1], true)).unwrap();
        assert_eq!(json, r#"{"selected_ids":[1,3],"delta":1}"#);
        assert!(serde_json::from_str::<RetrievalOutput>(r#"{"selected_ids":[],"delta":2}"#).is_err());
    }

    proptest! {
        #[test]
        fn render_parse_identity(sel in prop::collection::btree_set(1u32..30, 0..10), delta in any::<bool>()) {
            let h = history(30);
            let out = RetrievalOutput { selected_ids: sel, delta };
            prop_assert_eq!(parse_constrained(&out.render(), &h).unwrap(), out);
        }

        #[test]
        fn metrics_permutation_invariant_and_bounded(
            n in 1u32..20,
            pred_mask in any::<u32>(),
            gold_mask in any::<u32>(),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut all: Vec<u32> = (1..=n).collect();
            let pick = |mask: u32| all.iter().copied().filter(|i| mask >> (i - 1) & 1 == 1).collect::<BTreeSet<u32>>();
            let (pred, gold) = (pick(pred_mask), pick(gold_mask));
            let m = score_retrieval(&RetrievalOutput { selected_ids: pred.clone(), delta: false }, &gold, &all.iter().copied().collect()).unwrap();
            all.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let m2 = score_retrieval(&RetrievalOutput { selected_ids: pred.clone(), delta: false }, &gold, &all.iter().copied().collect()).unwrap();
            prop_assert_eq!(m, m2);
            prop_assert!((0.0..=1.0).contains(&m.f1));
            prop_assert_eq!(m.f1 == 1.0, pred == gold);
        }
    }
}
