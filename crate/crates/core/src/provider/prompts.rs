//! Prompt templates for the extractor, the consolidation reasoner, the
//! adaptive QA synthesizer and the judge.

use crate::model::IntentLabel;

pub const EXTRACTOR_SYSTEM: &str = "\
System Role: You are an automated Graph Memory Parser. Your task is to extract structured metadata from raw conversational logs to build a knowledge graph.

Instructions:
Analyze the input and return ONLY a valid JSON object matching the specific schema below. Do not include markdown formatting.

Target Schema:
- \"entities\": List of proper nouns (People, Locations, Organizations).
- \"topic\": String (1-3 words representing the main theme).
- \"relationships\": List of strings describing interactions (e.g., \"X researches Y\").
- \"semantic_facts\": List of atomic facts preserving key information.
- \"dates_mentioned\": List of temporal strings (e.g., \"next Friday\", \"2024-01-01\").
- \"summary\": One-sentence summary preserving speaker attribution.";

pub const EXTRACTOR_USER: &str = "\
Input Data:
- Speaker: {speaker}
- Text: {text}
- Context: {prev_summary}";

pub const JSON_REMINDER: &str = "Reminder: return only a single valid JSON object, with no markdown fences and no prose.";

pub const CONSOLIDATION_SYSTEM: &str = "\
System Role: You are a memory consolidation reasoner. Given a target event and its local graph neighborhood, infer which events directly cause or enable which other events.

Instructions:
- Consider only the events listed. Refer to events by their ref id.
- Propose a pair only when one event is a plausible cause, precondition, or reason for the other.
- Report a confidence in [0.0, 1.0] for each pair.
- Return ONLY a valid JSON object of the form {\"causal_pairs\": [{\"src\": <ref id of cause>, \"dst\": <ref id of effect>, \"confidence\": <float>, \"rationale\": \"<short reason>\"}]}. Return {\"causal_pairs\": []} if nothing applies.";

pub const CONSOLIDATION_USER: &str = "\
Target Event:
{target}

Neighborhood Events:
{neighborhood}

Episode History:
{history}";

pub const QA_SYSTEM: &str = "\
System Role: You are a precision QA assistant operating on retrieved memory contexts. Your goal is to answer the user's question accurately using only the provided information.";

pub const QA_USER: &str = "\
Context:
{context}

Current Query:
- Question: {question}
- Constraints: {category_specific_constraints}

Instructions:
1. Use ONLY information explicitly stated in the context.
2. If the answer is not present, respond exactly with \"Information not found\".
3. Be concise (typically 1-10 words) unless detailed reasoning is required.
4. {dynamic_instruction}

Answer:";

pub const NOT_FOUND: &str = "Information not found";

pub const JUDGE_SYSTEM: &str = "\
You are an expert evaluator assessing the semantic fidelity of a memory retrieval system. Score the Candidate Answer against the Gold Reference on a continuous scale [0.0, 1.0].

Scoring Rubric:
- 1.0 (Exact Alignment): Captures all key entities, temporal markers, and causal relationships. Semantically equivalent.
- 0.8 (Substantially Correct): Main point is accurate but lacks minor nuances or secondary details.
- 0.6 (Partial Match): Contains valid information but misses key constraints (e.g., wrong date but correct event).
- 0.4 (Tangential): Touches on the topic but misses the core information requirement.
- 0.2 (Incoherent): Factually incorrect with only minimal topical overlap.
- 0.0 (Contradiction/Hallucination): Completely unrelated or contradicts the ground truth.

Evaluation Constraints:
1. Temporal Flexibility: Accept relative time references (e.g., \"next Tuesday\") if they resolve to the same period as the Gold Reference.
2. Semantic Equivalence: Prioritize informational content over lexical matching.
3. Adversarial Handling: If the Gold Reference states \"Unanswerable\", the Candidate MUST explicitly state lack of information. Any hallucinated fact results in 0.0.";

pub const JUDGE_USER: &str = "\
Input: Question: {question} | Gold: {gold} | Candidate: {generated}
Output: JSON {\"score\": float, \"reasoning\": \"concise explanation\"}";

/// Answer-style category the QA prompt is steered toward for each intent.
pub fn qa_category(intent: IntentLabel) -> &'static str {
    match intent {
        IntentLabel::Why => "Multi-hop",
        IntentLabel::When => "Temporal",
        IntentLabel::Entity => "Single-hop/Factual",
        IntentLabel::General => "Open-Domain/Inference",
    }
}

pub fn dynamic_instruction(intent: IntentLabel) -> &'static str {
    match intent {
        IntentLabel::Why => "Connect related facts across different nodes. For comparison queries (e.g., 'both/all'), identify commonalities between entities rather than listing individual details.",
        IntentLabel::When => "Resolve relative dates (e.g., 'yesterday') using the event timestamps. Output dates strictly in 'D Month YYYY' format. Calculate durations if asked.",
        IntentLabel::Entity => "Extract the specific entity, name, or method requested. Do not add explanations. Return the exact fact matching the query intent.",
        IntentLabel::General => "Make reasonable inferences based on the user's personality traits, interests, and past behaviors. Support hypothetical ('would/could') reasoning with evidence.",
    }
}

/// Substitutes `{name}` placeholders. Placeholders are replaced in order so
/// that values containing braces are never re-expanded.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        let hit = after.find('}').and_then(|end| {
            let name = &after[..end];
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (end, *v))
        });
        match hit {
            Some((end, value)) => {
                out.push_str(&rest[..start]);
                out.push_str(value);
                rest = &after[end + 1..];
            }
            None => {
                out.push_str(&rest[..=start]);
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_does_not_reexpand_values() {
        let s = fill("a {x} b {y} {z}", &[("x", "{y}"), ("y", "2")]);
        assert_eq!(s, "a {y} b 2 {z}");
    }

    #[test]
    fn json_braces_survive_fill() {
        let s = fill(JUDGE_USER, &[("question", "q"), ("gold", "g"), ("generated", "c")]);
        assert!(s.contains("Question: q | Gold: g | Candidate: c"));
        assert!(s.contains("{\"score\": float"));
    }

    #[test]
    fn when_instruction_pins_date_format() {
        assert!(dynamic_instruction(IntentLabel::When).contains("Output dates strictly in 'D Month YYYY' format"));
        assert_eq!(qa_category(IntentLabel::Why), "Multi-hop");
    }
}
