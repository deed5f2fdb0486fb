//! Transcript loading for the fast path. Accepts a JSON array or JSON-lines
//! of turns, or conversations in the LoCoMo layout (`session_N` lists with
//! `session_N_date_time` stamps).

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::ingest::Interaction;
use crate::model::Timestamp;

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("transcript is not valid JSON or JSON lines: {0}")]
    Syntax(String),
    #[error("turn {index}: {message}")]
    Turn { index: usize, message: String },
    #[error("session {session}: {message}")]
    Session { session: String, message: String },
}

#[derive(Debug, Deserialize)]
struct Turn {
    #[serde(default)]
    speaker: String,
    text: String,
    timestamp: String,
    #[serde(default)]
    session: String,
}

fn turn_to_interaction(index: usize, t: Turn) -> Result<Interaction, TranscriptError> {
    let timestamp = Timestamp::parse(&t.timestamp).map_err(|e| TranscriptError::Turn { index, message: e.to_string() })?;
    Ok(Interaction { speaker: t.speaker, text: t.text, timestamp, timestamp_text: t.timestamp, session: t.session })
}

/// Turns of one LoCoMo-style conversation object, sessions in numeric order.
/// `prefix` namespaces session ids when several conversations are loaded.
pub fn locomo_conversation(conversation: &Value, prefix: &str) -> Result<Vec<Interaction>, TranscriptError> {
    let map = conversation.as_object().ok_or_else(|| TranscriptError::Syntax("conversation must be an object".into()))?;
    let mut sessions: Vec<(u32, &str)> = map
        .keys()
        .filter_map(|k| {
            let n = k.strip_prefix("session_")?;
            n.parse::<u32>().ok().map(|n| (n, k.as_str()))
        })
        .collect();
    sessions.sort();
    let mut out = Vec::new();
    for (n, key) in sessions {
        let stamp_key = format!("{key}_date_time");
        let stamp = map.get(&stamp_key).and_then(Value::as_str).ok_or_else(|| TranscriptError::Session {
            session: key.to_string(),
            message: format!("missing {stamp_key}"),
        })?;
        let timestamp = Timestamp::parse(stamp)
            .map_err(|e| TranscriptError::Session { session: key.to_string(), message: e.to_string() })?;
        let turns = map[key].as_array().ok_or_else(|| TranscriptError::Session {
            session: key.to_string(),
            message: "session must be a list of turns".into(),
        })?;
        let session = if prefix.is_empty() { format!("session_{n}") } else { format!("{prefix}/session_{n}") };
        for turn in turns {
            let text = turn.get("text").and_then(Value::as_str).unwrap_or_default();
            if text.trim().is_empty() {
                continue;
            }
            out.push(Interaction {
                speaker: turn.get("speaker").and_then(Value::as_str).unwrap_or_default().to_string(),
                text: text.to_string(),
                timestamp,
                timestamp_text: stamp.to_string(),
                session: session.clone(),
            });
        }
    }
    Ok(out)
}

/// Parses any supported transcript layout into interactions in file order.
pub fn parse_transcript(text: &str) -> Result<Vec<Interaction>, TranscriptError> {
    let trimmed = text.trim_start();
    if let Ok(value) = serde_json::from_str::<Value>(trimmed) {
        return from_value(value);
    }
    // JSON lines
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let turn: Turn = serde_json::from_str(line).map_err(|e| TranscriptError::Syntax(format!("line {}: {e}", i + 1)))?;
        out.push(turn_to_interaction(i, turn)?);
    }
    Ok(out)
}

fn from_value(value: Value) -> Result<Vec<Interaction>, TranscriptError> {
    match value {
        Value::Array(items) => {
            if items.iter().all(|v| v.get("conversation").is_some()) && !items.is_empty() {
                let mut out = Vec::new();
                for (i, item) in items.iter().enumerate() {
                    let id = item.get("sample_id").and_then(Value::as_str).map_or_else(|| format!("conv-{i}"), str::to_string);
                    out.extend(locomo_conversation(&item["conversation"], &id)?);
                }
                return Ok(out);
            }
            items
                .into_iter()
                .enumerate()
                .map(|(i, v)| {
                    let turn: Turn = serde_json::from_value(v).map_err(|e| TranscriptError::Turn { index: i, message: e.to_string() })?;
                    turn_to_interaction(i, turn)
                })
                .collect()
        }
        Value::Object(ref map) if map.contains_key("text") => {
            let turn: Turn = serde_json::from_value(value).map_err(|e| TranscriptError::Turn { index: 0, message: e.to_string() })?;
            Ok(vec![turn_to_interaction(0, turn)?])
        }
        Value::Object(ref map) if map.contains_key("conversation") => locomo_conversation(&map["conversation"], ""),
        Value::Object(_) => locomo_conversation(&value, ""),
        _ => Err(TranscriptError::Syntax("expected a list of turns or a conversation object".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_turns_and_json_lines_agree() {
        let array = r#"[{"speaker":"A","text":"hi","timestamp":"2024-01-01T10:00:00Z","session":"s"}]"#;
        let lines = "{\"speaker\":\"A\",\"text\":\"hi\",\"timestamp\":\"2024-01-01T10:00:00Z\",\"session\":\"s\"}\n";
        assert_eq!(parse_transcript(array).unwrap(), parse_transcript(lines).unwrap());
    }

    #[test]
    fn locomo_sessions_sort_numerically() {
        let doc = r#"{"conversation": {
            "speaker_a": "A", "speaker_b": "B",
            "session_10_date_time": "1:00 pm on 3 June, 2023",
            "session_10": [{"speaker":"B","dia_id":"D10:1","text":"later"}],
            "session_2_date_time": "1:56 pm on 8 May, 2023",
            "session_2": [{"speaker":"A","dia_id":"D2:1","text":"earlier"}, {"speaker":"B","text":"  "}]
        }}"#;
        let turns = parse_transcript(doc).unwrap();
        assert_eq!(turns.len(), 2);
        assert_eq!(turns[0].text, "earlier");
        assert_eq!(turns[0].timestamp.to_iso(), "2023-05-08T13:56:00Z");
        assert_eq!(turns[1].session, "session_10");
    }

    #[test]
    fn bad_timestamp_names_the_turn() {
        let doc = r#"[{"text":"x","timestamp":"someday"}]"#;
        assert!(matches!(parse_transcript(doc), Err(TranscriptError::Turn { index: 0, .. })));
    }
}
