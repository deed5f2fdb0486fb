//! QA datasets: the LoCoMo layout (conversations with `qa` lists) and a
//! converter from the LongMemEval layout into the same form.

use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use strata_core::ingest::Interaction;
use strata_core::model::Timestamp;
use strata_core::transcript::{locomo_conversation, TranscriptError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("dataset is not valid JSON: {0}")]
    Syntax(String),
    #[error("sample {sample}: {message}")]
    Sample { sample: String, message: String },
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    SingleHop,
    MultiHop,
    Temporal,
    OpenDomain,
    Adversarial,
}

impl Category {
    pub const ALL: [Category; 5] = [Category::SingleHop, Category::MultiHop, Category::Temporal, Category::OpenDomain, Category::Adversarial];

    /// LoCoMo numeric codes: 1 multi-hop, 2 temporal, 3 open-domain,
    /// 4 single-hop, 5 adversarial.
    pub fn from_locomo(code: u64) -> Option<Category> {
        Some(match code {
            1 => Category::MultiHop,
            2 => Category::Temporal,
            3 => Category::OpenDomain,
            4 => Category::SingleHop,
            5 => Category::Adversarial,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::SingleHop => "single-hop",
            Category::MultiHop => "multi-hop",
            Category::Temporal => "temporal",
            Category::OpenDomain => "open-domain",
            Category::Adversarial => "adversarial",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const UNANSWERABLE: &str = "Unanswerable";

/// One question with its gold answer. The category label is only reachable
/// through [`QASample::category`], which counts reads so tests can prove the
/// answer path never looks at it.
#[derive(Debug)]
pub struct QASample {
    pub question: String,
    pub gold: String,
    pub conversation: String,
    /// Reference time for relative expressions in the question.
    pub now: Timestamp,
    category: Category,
    category_reads: AtomicUsize,
}

impl QASample {
    pub fn new(question: impl Into<String>, gold: impl Into<String>, category: Category, conversation: impl Into<String>, now: Timestamp) -> Self {
        QASample {
            question: question.into(),
            gold: gold.into(),
            conversation: conversation.into(),
            now,
            category,
            category_reads: AtomicUsize::new(0),
        }
    }

    pub fn category(&self) -> Category {
        self.category_reads.fetch_add(1, Ordering::SeqCst);
        self.category
    }

    pub fn category_reads(&self) -> usize {
        self.category_reads.load(Ordering::SeqCst)
    }
}

#[derive(Debug)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Interaction>,
    pub questions: Vec<QASample>,
}

#[derive(Debug, Default)]
pub struct Dataset {
    pub name: String,
    pub conversations: Vec<Conversation>,
}

impl Dataset {
    pub fn question_count(&self) -> usize {
        self.conversations.iter().map(|c| c.questions.len()).sum()
    }
}

fn answer_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Null => None,
        other => Some(other.to_string()),
    }
}

fn sample_err(sample: &str, message: impl Into<String>) -> DatasetError {
    DatasetError::Sample { sample: sample.to_string(), message: message.into() }
}

/// Parses the LoCoMo layout: a list of `{sample_id, conversation, qa}`.
/// Questions without an `answer` field take the gold "Unanswerable".
pub fn parse_locomo(text: &str, name: &str) -> Result<Dataset, DatasetError> {
    let value: Value = serde_json::from_str(text).map_err(|e| DatasetError::Syntax(e.to_string()))?;
    let items = match value {
        Value::Array(items) => items,
        obj @ Value::Object(_) => vec![obj],
        _ => return Err(DatasetError::Syntax("expected a list of samples".into())),
    };
    let mut conversations = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let id = item.get("sample_id").and_then(Value::as_str).map_or_else(|| format!("conv-{i}"), str::to_string);
        let conv = item.get("conversation").ok_or_else(|| sample_err(&id, "missing \"conversation\""))?;
        let turns = locomo_conversation(conv, &id)?;
        let now = turns.iter().map(|t| t.timestamp).max().unwrap_or(Timestamp(0));
        let mut questions = Vec::new();
        for (j, qa) in item.get("qa").and_then(Value::as_array).map(Vec::as_slice).unwrap_or_default().iter().enumerate() {
            let question = qa.get("question").and_then(Value::as_str).ok_or_else(|| sample_err(&id, format!("qa {j} has no question")))?;
            let code = qa.get("category").and_then(Value::as_u64).ok_or_else(|| sample_err(&id, format!("qa {j} has no category")))?;
            let category = Category::from_locomo(code).ok_or_else(|| sample_err(&id, format!("qa {j}: unknown category {code}")))?;
            let gold = qa.get("answer").and_then(answer_text).unwrap_or_else(|| UNANSWERABLE.to_string());
            questions.push(QASample::new(question, gold, category, id.clone(), now));
        }
        conversations.push(Conversation { id, turns, questions });
    }
    Ok(Dataset { name: name.to_string(), conversations })
}

/// LongMemEval question types mapped onto the five categories. Ids ending
/// in `_abs` are abstention items and count as adversarial.
fn longmemeval_category(question_type: &str, question_id: &str) -> Option<Category> {
    if question_id.ends_with("_abs") {
        return Some(Category::Adversarial);
    }
    Some(match question_type {
        "single-session-user" | "single-session-assistant" | "single-session-preference" | "knowledge-update" => Category::SingleHop,
        "multi-session" => Category::MultiHop,
        "temporal-reasoning" => Category::Temporal,
        _ => return None,
    })
}

/// `2023/05/20 (Sat) 02:21` and friends.
fn longmemeval_time(text: &str) -> Option<Timestamp> {
    let cleaned: String = match (text.find('('), text.find(')')) {
        (Some(a), Some(b)) if b > a => format!("{}{}", &text[..a], &text[b + 1..]),
        _ => text.to_string(),
    };
    let cleaned = cleaned.split_whitespace().collect::<Vec<_>>().join(" ").replace('/', "-");
    Timestamp::parse(&cleaned).ok()
}

/// Converts the LongMemEval layout (one haystack per question) into one
/// conversation per question.
pub fn convert_longmemeval(text: &str, name: &str) -> Result<Dataset, DatasetError> {
    let value: Value = serde_json::from_str(text).map_err(|e| DatasetError::Syntax(e.to_string()))?;
    let items = value.as_array().ok_or_else(|| DatasetError::Syntax("expected a list of questions".into()))?;
    let mut conversations = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let id = item.get("question_id").and_then(Value::as_str).map_or_else(|| format!("q-{i}"), str::to_string);
        let qtype = item.get("question_type").and_then(Value::as_str).unwrap_or_default();
        let category = longmemeval_category(qtype, &id).ok_or_else(|| sample_err(&id, format!("unknown question_type {qtype:?}")))?;
        let sessions = item.get("haystack_sessions").and_then(Value::as_array).ok_or_else(|| sample_err(&id, "missing haystack_sessions"))?;
        let dates = item.get("haystack_dates").and_then(Value::as_array).cloned().unwrap_or_default();
        let session_ids = item.get("haystack_session_ids").and_then(Value::as_array).cloned().unwrap_or_default();
        let mut turns = Vec::new();
        for (s, session) in sessions.iter().enumerate() {
            let stamp = dates.get(s).and_then(Value::as_str).ok_or_else(|| sample_err(&id, format!("session {s} has no date")))?;
            let ts = longmemeval_time(stamp).ok_or_else(|| sample_err(&id, format!("unreadable date {stamp:?}")))?;
            let sid = session_ids.get(s).and_then(Value::as_str).map_or_else(|| format!("{id}/session_{s}"), |x| format!("{id}/{x}"));
            for turn in session.as_array().map(Vec::as_slice).unwrap_or_default() {
                let content = turn.get("content").and_then(Value::as_str).unwrap_or_default();
                if content.trim().is_empty() {
                    continue;
                }
                turns.push(Interaction {
                    speaker: turn.get("role").and_then(Value::as_str).unwrap_or_default().to_string(),
                    text: content.to_string(),
                    timestamp: ts,
                    timestamp_text: stamp.to_string(),
                    session: sid.clone(),
                });
            }
        }
        turns.sort_by_key(|t| t.timestamp);
        let tail = turns.iter().map(|t| t.timestamp).max().unwrap_or(Timestamp(0));
        let now = item.get("question_date").and_then(Value::as_str).and_then(longmemeval_time).unwrap_or(tail).max(tail);
        let question = item.get("question").and_then(Value::as_str).ok_or_else(|| sample_err(&id, "missing question"))?;
        let gold = if category == Category::Adversarial {
            UNANSWERABLE.to_string()
        } else {
            item.get("answer").and_then(answer_text).ok_or_else(|| sample_err(&id, "missing answer"))?
        };
        let questions = vec![QASample::new(question, gold, category, id.clone(), now)];
        conversations.push(Conversation { id, turns, questions });
    }
    Ok(Dataset { name: name.to_string(), conversations })
}

/// Loads a dataset file, detecting the layout from its first record.
pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Read { path: path.display().to_string(), source })?;
    let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
    let probe: Value = serde_json::from_str(&text).map_err(|e| DatasetError::Syntax(e.to_string()))?;
    let first = probe.as_array().and_then(|a| a.first()).unwrap_or(&probe);
    if first.get("haystack_sessions").is_some() {
        convert_longmemeval(&text, &name)
    } else {
        parse_locomo(&text, &name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_reads_are_counted() {
        let q = QASample::new("q", "a", Category::Temporal, "c", Timestamp(0));
        assert_eq!(q.category_reads(), 0);
        assert_eq!(q.category(), Category::Temporal);
        assert_eq!(q.category_reads(), 1);
    }

    #[test]
    fn locomo_codes() {
        assert_eq!(Category::from_locomo(4), Some(Category::SingleHop));
        assert_eq!(Category::from_locomo(5), Some(Category::Adversarial));
        assert_eq!(Category::from_locomo(9), None);
    }

    #[test]
    fn longmemeval_dates() {
        assert_eq!(longmemeval_time("2023/05/20 (Sat) 02:21").unwrap().to_iso(), "2023-05-20T02:21:00Z");
        assert!(longmemeval_time("someday").is_none());
    }

    #[test]
    fn longmemeval_converts() {
        let doc = r#"[{"question_id":"q1_abs","question_type":"single-session-user","question":"What is my cat called?",
            "answer":"n/a","question_date":"2023/05/30 (Tue) 10:00",
            "haystack_dates":["2023/05/20 (Sat) 02:21"],"haystack_session_ids":["s1"],
            "haystack_sessions":[[{"role":"user","content":"I adopted a dog."},{"role":"assistant","content":"Nice!"}]]}]"#;
        let d = convert_longmemeval(doc, "x").unwrap();
        let c = &d.conversations[0];
        assert_eq!(c.turns.len(), 2);
        assert_eq!(c.turns[0].session, "q1_abs/s1");
        assert_eq!(c.questions[0].gold, UNANSWERABLE);
        assert_eq!(c.questions[0].now.to_iso(), "2023-05-30T10:00:00Z");
    }
}
