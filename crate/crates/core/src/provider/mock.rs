//! Deterministic providers driven by a declarative rule table. They read
//! the same rendered prompts a remote model would receive and answer with
//! the same wire shapes.

use std::collections::BTreeSet;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ChatProvider, ChatRequest, ProviderError, ProviderRole};
use crate::index::tokenize;

const DEFAULT_RULES: &str = include_str!("../../fixtures/mock_rules.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicRule {
    pub pattern: String,
    pub topic: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractorRules {
    #[serde(default)]
    pub ignore_entities: Vec<String>,
    #[serde(default)]
    pub topics: Vec<TopicRule>,
    pub default_topic: String,
    pub date_pattern: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CausalRule {
    pub cause: String,
    pub effect: String,
    pub confidence: f64,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReasonerRules {
    #[serde(default)]
    pub rules: Vec<CausalRule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStrategy {
    /// Echo the content of the first context block.
    FirstBlock,
    /// Return the block sharing the most keywords with the question, or the
    /// refusal when fewer than `min_overlap` keywords match.
    BestOverlap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswererRules {
    pub strategy: AnswerStrategy,
    #[serde(default = "one")]
    pub min_overlap: usize,
    pub refusal: String,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeRules {
    pub refusal_markers: Vec<String>,
    pub unanswerable_gold: Vec<String>,
    /// Score when the normalized gold answer appears inside the candidate.
    pub containment_score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRules {
    pub extractor: ExtractorRules,
    #[serde(default)]
    pub reasoner: ReasonerRules,
    pub answerer: AnswererRules,
    pub judge: JudgeRules,
}

impl Default for MockRules {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_RULES).expect("bundled mock rules are valid")
    }
}

impl MockRules {
    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        serde_json::from_str(text).map_err(|e| ProviderError::MockRules(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path).map_err(|e| ProviderError::MockRules(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

struct CompiledCausal {
    cause: Regex,
    effect: Regex,
    confidence: f64,
    rationale: String,
}

/// Rule-table chat provider for one role.
pub struct MockChat {
    role: ProviderRole,
    rules: MockRules,
    topics: Vec<(Regex, String)>,
    dates: Regex,
    causal: Vec<CompiledCausal>,
    block: Regex,
}

fn compile(pattern: &str) -> Result<Regex, ProviderError> {
    Regex::new(pattern).map_err(|e| ProviderError::MockRules(format!("{pattern}: {e}")))
}

impl MockChat {
    pub fn new(role: ProviderRole, rules: MockRules) -> Result<Self, ProviderError> {
        let topics = rules
            .extractor
            .topics
            .iter()
            .map(|t| Ok((compile(&t.pattern)?, t.topic.clone())))
            .collect::<Result<_, ProviderError>>()?;
        let causal = rules
            .reasoner
            .rules
            .iter()
            .map(|r| {
                Ok(CompiledCausal { cause: compile(&r.cause)?, effect: compile(&r.effect)?, confidence: r.confidence, rationale: r.rationale.clone() })
            })
            .collect::<Result<_, ProviderError>>()?;
        Ok(MockChat {
            role,
            dates: compile(&rules.extractor.date_pattern)?,
            rules,
            topics,
            causal,
            block: Regex::new(r"(?m)^<t:([^>]*)> (.*) <ref:(\d+)>$").unwrap(),
        })
    }

    fn blocks<'a>(&self, text: &'a str) -> Vec<(u64, &'a str)> {
        self.block
            .captures_iter(text)
            .filter_map(|c| Some((c.get(3)?.as_str().parse().ok()?, c.get(2)?.as_str())))
            .collect()
    }

    fn extract(&self, user: &str) -> String {
        let speaker = between(user, "- Speaker: ", "\n").unwrap_or_default().trim();
        let text = between(user, "- Text: ", "\n- Context: ").unwrap_or_default().trim();
        let ignore: BTreeSet<&str> = self.rules.extractor.ignore_entities.iter().map(String::as_str).collect();
        let mut entities: Vec<String> = Vec::new();
        for word in text.split_whitespace() {
            let w = word.trim_matches(|c: char| !c.is_alphanumeric());
            let w = w.strip_suffix("'s").or_else(|| w.strip_suffix("’s")).unwrap_or(w);
            let starts_upper = w.chars().next().is_some_and(char::is_uppercase);
            if starts_upper && w.chars().count() > 1 && !ignore.contains(w) && !entities.iter().any(|e| e == w) {
                entities.push(w.to_string());
            }
        }
        let topic = self
            .topics
            .iter()
            .find(|(re, _)| re.is_match(text))
            .map_or(self.rules.extractor.default_topic.clone(), |(_, t)| t.clone());
        let facts: Vec<String> =
            text.split(['.', '!', '?']).map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect();
        let relationships: Vec<String> =
            entities.iter().filter(|e| e.as_str() != speaker).map(|e| format!("{speaker} mentions {e}")).collect();
        let dates: Vec<String> = self.dates.find_iter(text).map(|m| m.as_str().to_string()).collect();
        let first = facts.first().cloned().unwrap_or_default();
        let summary = if speaker.is_empty() { first } else { format!("{speaker}: {first}") };
        json!({
            "entities": entities,
            "topic": topic,
            "relationships": relationships,
            "semantic_facts": facts,
            "dates_mentioned": dates,
            "summary": summary,
        })
        .to_string()
    }

    fn reason(&self, user: &str) -> String {
        let target_section = between(user, "Target Event:\n", "\n\nNeighborhood Events:").unwrap_or_default();
        let neighborhood = between(user, "Neighborhood Events:\n", "\n\nEpisode History:").unwrap_or_default();
        let mut pairs = Vec::new();
        if let Some(&(target, target_text)) = self.blocks(target_section).first() {
            for (other, other_text) in self.blocks(neighborhood) {
                if other == target {
                    continue;
                }
                for rule in &self.causal {
                    if rule.cause.is_match(target_text) && rule.effect.is_match(other_text) {
                        pairs.push(json!({"src": target, "dst": other, "confidence": rule.confidence, "rationale": rule.rationale}));
                    }
                    if rule.cause.is_match(other_text) && rule.effect.is_match(target_text) {
                        pairs.push(json!({"src": other, "dst": target, "confidence": rule.confidence, "rationale": rule.rationale}));
                    }
                }
            }
        }
        json!({ "causal_pairs": pairs }).to_string()
    }

    fn answer(&self, user: &str) -> String {
        let rules = &self.rules.answerer;
        let context = between(user, "Context:\n", "\n\nCurrent Query:").unwrap_or_default();
        let question = between(user, "- Question: ", "\n").unwrap_or_default();
        let blocks = self.blocks(context);
        match rules.strategy {
            AnswerStrategy::FirstBlock => blocks.first().map_or(rules.refusal.clone(), |b| b.1.to_string()),
            AnswerStrategy::BestOverlap => {
                let wanted: BTreeSet<String> = content_words(question);
                let mut best: Option<(usize, &str)> = None;
                for (_, text) in &blocks {
                    let have = content_words(text);
                    let overlap = wanted.intersection(&have).count();
                    if best.is_none_or(|(b, _)| overlap > b) {
                        best = Some((overlap, text));
                    }
                }
                match best {
                    Some((n, text)) if n >= rules.min_overlap => text.to_string(),
                    _ => rules.refusal.clone(),
                }
            }
        }
    }

    fn grade(&self, user: &str) -> String {
        let rules = &self.rules.judge;
        let line = between(user, "Input: Question: ", "\n").unwrap_or_default();
        let (gold, candidate) = match line.split_once(" | Gold: ").and_then(|(_, rest)| rest.split_once(" | Candidate: ")) {
            Some((g, c)) => (normalize(g), normalize(c)),
            None => return json!({"score": 0.0, "reasoning": "unreadable grading request"}).to_string(),
        };
        let (score, reasoning) = if rules.unanswerable_gold.iter().any(|u| normalize(u) == gold) {
            if rules.refusal_markers.iter().any(|m| candidate.contains(&normalize(m))) {
                (1.0, "candidate correctly states the information is unavailable")
            } else {
                (0.0, "gold is unanswerable but the candidate asserts a fact")
            }
        } else if !gold.is_empty() && gold == candidate {
            (1.0, "exact match")
        } else if !gold.is_empty() && format!(" {candidate} ").contains(&format!(" {gold} ")) {
            (rules.containment_score, "candidate contains the gold answer")
        } else {
            (0.0, "no alignment with the gold answer")
        };
        json!({ "score": score, "reasoning": reasoning }).to_string()
    }
}

/// Index tokens minus one-letter fragments such as the "s" of a possessive.
fn content_words(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().filter(|t| t.chars().count() > 1).collect()
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let rest = &text[from..];
    Some(rest.find(end).map_or(rest, |e| &rest[..e]))
}

fn normalize(s: &str) -> String {
    s.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

impl ChatProvider for MockChat {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let user = request.user();
        match self.role {
            ProviderRole::Extractor => Ok(self.extract(&user)),
            ProviderRole::Reasoner => Ok(self.reason(&user)),
            ProviderRole::Answerer => Ok(self.answer(&user)),
            ProviderRole::Judge => Ok(self.grade(&user)),
            ProviderRole::Embedder => Err(ProviderError::Precondition("the embedder role is not a chat provider".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{extract_attributes, judge, ProviderConfig};

    fn mock(role: ProviderRole) -> MockChat {
        MockChat::new(role, MockRules::default()).unwrap()
    }

    #[test]
    fn extractor_echoes_capitalized_tokens() {
        let r = extract_attributes(&mock(ProviderRole::Extractor), &ProviderConfig::default(), "Melanie", "Melanie plays the clarinet", "").unwrap();
        assert_eq!(r.entities, vec!["Melanie"]);
        assert_eq!(r.topic, "music");
        assert_eq!(r.summary, "Melanie: Melanie plays the clarinet");
    }

    #[test]
    fn extractor_skips_sentence_starters_and_finds_dates() {
        let r = extract_attributes(
            &mock(ProviderRole::Extractor),
            &ProviderConfig::default(),
            "Caroline",
            "Yesterday I met Melanie's brother in Boston. It rained.",
            "",
        )
        .unwrap();
        assert_eq!(r.entities, vec!["Melanie", "Boston"]);
        assert_eq!(r.dates_mentioned, vec!["Yesterday"]);
        assert_eq!(r.semantic_facts.len(), 2);
    }

    #[test]
    fn judge_rules() {
        let j = mock(ProviderRole::Judge);
        let cfg = ProviderConfig::default();
        assert_eq!(judge(&j, &cfg, "q", "Clarinet and violin", "clarinet and violin.").unwrap().score, 1.0);
        assert_eq!(judge(&j, &cfg, "q", "three items", "banana").unwrap().score, 0.0);
        assert_eq!(judge(&j, &cfg, "q", "Unanswerable", "Information not found").unwrap().score, 1.0);
        assert_eq!(judge(&j, &cfg, "q", "Unanswerable", "She owns a boat named Lucy").unwrap().score, 0.0);
    }

    #[test]
    fn rules_reject_bad_regex() {
        let mut rules = MockRules::default();
        rules.reasoner.rules.push(CausalRule { cause: "(".into(), effect: "x".into(), confidence: 0.5, rationale: String::new() });
        assert!(matches!(MockChat::new(ProviderRole::Reasoner, rules), Err(ProviderError::MockRules(_))));
    }
}
