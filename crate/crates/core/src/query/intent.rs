//! Rule cascade mapping a raw query to an intent label.

use std::sync::OnceLock;

use regex::Regex;

use crate::model::IntentLabel;

const WHY_CUES: &[&str] = &["why", "cause", "causes", "caused", "reason", "reasons", "because"];
const WHEN_WORDS: &[&str] = &[
    "when", "yesterday", "today", "tomorrow", "tonight", "ago", "date", "monday", "tuesday", "wednesday", "thursday",
    "friday", "saturday", "sunday", "weekend",
];
const ENTITY_WH: &[&str] = &["what", "which", "how"];

fn when_phrases() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(what time|what year|what month|what day|how long|last (week|month|year)|next (week|month|year)|(before|after) (the|a|an|her|his|my|their|our|\w+ing)\b)|\b\d{4}-\d{2}-\d{2}\b|\b\d{1,2} (january|february|march|april|may|june|july|august|september|october|november|december)\b|\b(january|february|march|april|june|july|august|september|october|november|december)\b|\b(19|20)\d{2}\b",
        )
        .unwrap()
    })
}

fn words(query: &str) -> Vec<&str> {
    query.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '’')).filter(|w| !w.is_empty()).collect()
}

/// Classifies with no knowledge of stored entities.
pub fn classify_intent(query: &str) -> IntentLabel {
    classify_intent_with(query, |_| false)
}

/// Precedence WHY > WHEN > ENTITY > GENERAL. `is_known_entity` receives a
/// lower-cased name and lets possessives of stored entities count as entity
/// questions even when they are not capitalized.
pub fn classify_intent_with(query: &str, is_known_entity: impl Fn(&str) -> bool) -> IntentLabel {
    let ws = words(query);
    let lower: Vec<String> = ws.iter().map(|w| w.to_lowercase()).collect();
    if lower.iter().any(|w| WHY_CUES.contains(&w.as_str())) || query.to_lowercase().contains("what led to") {
        return IntentLabel::Why;
    }
    if lower.iter().any(|w| WHEN_WORDS.contains(&w.as_str())) || when_phrases().is_match(query) {
        return IntentLabel::When;
    }
    if lower.iter().any(|w| w == "who" || w == "whom" || w == "whose") {
        return IntentLabel::Entity;
    }
    let possessive = ws.iter().any(|w| {
        let stem = w.strip_suffix("'s").or_else(|| w.strip_suffix("’s"));
        stem.is_some_and(|s| s.chars().next().is_some_and(char::is_uppercase) || is_known_entity(&s.to_lowercase()))
    });
    if possessive {
        return IntentLabel::Entity;
    }
    let interrogative = lower.first().is_some_and(|w| ENTITY_WH.contains(&w.as_str()));
    let proper_noun = ws.iter().skip(1).any(|w| w.chars().next().is_some_and(char::is_uppercase) && *w != "I");
    if interrogative && proper_noun {
        return IntentLabel::Entity;
    }
    IntentLabel::General
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cascade_examples() {
        assert_eq!(classify_intent("When did she hike after the roadtrip?"), IntentLabel::When);
        assert_eq!(classify_intent("What instruments does Melanie play?"), IntentLabel::Entity);
        assert_eq!(classify_intent("Tell me something interesting."), IntentLabel::General);
    }

    #[test]
    fn precedence() {
        assert_eq!(classify_intent("Why did Melanie cancel the trip yesterday?"), IntentLabel::Why);
        assert_eq!(classify_intent("When did Melanie start painting?"), IntentLabel::When);
        assert_eq!(classify_intent("What was the reason for the move?"), IntentLabel::Why);
        assert_eq!(classify_intent("Who went to the concert?"), IntentLabel::Entity);
        assert_eq!(classify_intent("Where is Caroline's brother now?"), IntentLabel::Entity);
    }

    #[test]
    fn temporal_phrases() {
        assert_eq!(classify_intent("What did they do on 2024-03-01?"), IntentLabel::When);
        assert_eq!(classify_intent("how long was the trip"), IntentLabel::When);
        assert_eq!(classify_intent("what happened after the party"), IntentLabel::When);
        assert_eq!(classify_intent("what did she say 3 days ago"), IntentLabel::When);
        assert_eq!(classify_intent("What may happen next?"), IntentLabel::General);
    }

    #[test]
    fn known_entity_possessive() {
        let q = "where is melanie's guitar";
        assert_eq!(classify_intent(q), IntentLabel::General);
        assert_eq!(classify_intent_with(q, |n| n == "melanie"), IntentLabel::Entity);
    }
}
