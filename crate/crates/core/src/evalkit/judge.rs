use serde::{Deserialize, Serialize};

use crate::datasetgen::{extract_questions, system_message};
use crate::error::{Error, Result};
use crate::llmclient::{ChatBackend, ChatMessage, ChatRequest};

const JUDGE_PROMPT_JSON: &str = include_str!("../../data/judge_prompt.json");

/// Judge prompt with `{context}`, `{question}`, `{answer_1}` (candidate) and
/// `{answer_2}` (reference) placeholders in `user`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgePrompt {
    pub system: String,
    pub user: String,
}

impl Default for JudgePrompt {
    fn default() -> Self {
        serde_json::from_str(JUDGE_PROMPT_JSON).expect("judge prompt parses")
    }
}

impl JudgePrompt {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: JudgePrompt = serde_json::from_str(&text).map_err(|e| Error::parse(None, e.to_string()))?;
        for key in ["{question}", "{answer_1}", "{answer_2}"] {
            if !p.user.contains(key) {
                return Err(Error::validation(format!("judge prompt lacks {key}")));
            }
        }
        Ok(p)
    }

    pub fn render(&self, context: &str, question: &str, candidate: &str, reference: &str) -> Vec<ChatMessage> {
        // Single pass so placeholder-like text inside answers is left alone.
        let mut user = String::with_capacity(self.user.len() + candidate.len() + reference.len());
        let mut rest = self.user.as_str();
        while let Some(start) = rest.find('{') {
            user.push_str(&rest[..start]);
            let tail = &rest[start..];
            let sub = [
                ("{context}", context),
                ("{question}", question),
                ("{answer_1}", candidate),
                ("{answer_2}", reference),
            ]
            .into_iter()
            .find(|(k, _)| tail.starts_with(k));
            match sub {
                Some((k, v)) => {
                    user.push_str(v);
                    rest = &tail[k.len()..];
                }
                None => {
                    user.push('{');
                    rest = &tail[1..];
                }
            }
        }
        user.push_str(rest);
        vec![ChatMessage::system(&self.system), ChatMessage::user(user)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    pub qid: String,
    pub score_candidate: f64,
    pub score_reference: f64,
    pub relative_pct: f64,
    pub rationale: String,
}

/// First line must hold exactly two scores in [1, 10]: candidate, then
/// reference. The remaining text is the rationale.
pub fn parse_judge_scores(text: &str) -> Result<(f64, f64, String)> {
    let trimmed = text.trim_start();
    let (first, rest) = trimmed.split_once('\n').unwrap_or((trimmed, ""));
    let fields: Vec<&str> = first
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .collect();
    let scores: Option<Vec<f64>> = fields.iter().map(|s| s.parse::<f64>().ok()).collect();
    let (c, r) = match scores.as_deref() {
        Some(&[c, r]) => (c, r),
        _ => return Err(Error::parse(Some(1), format!("expected two scores, got {text:?}"))),
    };
    for s in [c, r] {
        if !(1.0..=10.0).contains(&s) {
            return Err(Error::validation(format!("judge score {s} outside [1, 10]")));
        }
    }
    Ok((c, r, rest.trim().to_string()))
}

/// Asks the judge to score a candidate answer against a reference answer.
#[allow(clippy::too_many_arguments)]
pub async fn judge_relative<B: ChatBackend>(
    backend: &B,
    prompt: &JudgePrompt,
    qid: &str,
    question: &str,
    context: &str,
    candidate: &str,
    reference: &str,
    model: &str,
    temperature: f64,
) -> Result<JudgeOutcome> {
    let req = ChatRequest {
        model: model.to_string(),
        messages: prompt.render(context, question, candidate, reference),
        temperature,
        max_tokens: None,
        request_id: format!("judge-{qid}"),
    };
    let res = backend.chat(req).await?;
    let (c, r, rationale) = parse_judge_scores(&res.text)?;
    Ok(JudgeOutcome {
        qid: qid.to_string(),
        score_candidate: c,
        score_reference: r,
        relative_pct: 100.0 * c / r,
        rationale,
    })
}

/// Ratio of summed candidate scores to summed reference scores, in percent.
pub fn relative_score(outcomes: &[JudgeOutcome]) -> Option<f64> {
    let c: f64 = outcomes.iter().map(|o| o.score_candidate).sum();
    let r: f64 = outcomes.iter().map(|o| o.score_reference).sum();
    (r > 0.0).then(|| 100.0 * c / r)
}

/// Generates evaluation questions about one image from its OCR text and a
/// human caption, keeping only the questions.
pub async fn gen_read_eval_questions<B: ChatBackend>(
    backend: &B,
    request_id: &str,
    ocr_text: &str,
    caption: &str,
    model: &str,
    temperature: f64,
) -> Result<Vec<String>> {
    if ocr_text.trim().is_empty() && caption.trim().is_empty() {
        return Err(Error::validation(format!(
            "{request_id}: OCR text and caption are both empty"
        )));
    }
    let one_line = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    let req = ChatRequest {
        model: model.to_string(),
        messages: vec![
            ChatMessage::system(system_message()),
            ChatMessage::user(format!("{}\n{}", one_line(ocr_text), one_line(caption))),
        ],
        temperature,
        max_tokens: None,
        request_id: request_id.to_string(),
    };
    let res = backend.chat(req).await?;
    let questions = extract_questions(&res.text);
    if questions.is_empty() {
        return Err(Error::parse(None, format!("{request_id}: no questions in response")));
    }
    Ok(questions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_parsing() {
        let (c, r, why) = parse_judge_scores("8 10\nAssistant 2 is more precise.").unwrap();
        assert_eq!((c, r), (8.0, 10.0));
        assert_eq!(100.0 * c / r, 80.0);
        assert_eq!(why, "Assistant 2 is more precise.");
        assert_eq!(parse_judge_scores("10 10").unwrap().0, 10.0);
        assert_eq!(parse_judge_scores("7.5, 9").unwrap().0, 7.5);
        assert!(matches!(
            parse_judge_scores("good answer\n8 9"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(parse_judge_scores("0 10"), Err(Error::Validation(_))));
        assert!(matches!(parse_judge_scores("8 11"), Err(Error::Validation(_))));
    }

    #[test]
    fn render_fills_placeholders_once() {
        let p = JudgePrompt::default();
        let msgs = p.render("CTX", "Q?", "cand {answer_2}", "REF");
        let u = &msgs[1].content;
        assert!(u.contains("CTX") && u.contains("Q?") && u.contains("REF"));
        assert!(u.contains("cand {answer_2}"));
        assert!(!u.contains("{context}"));
        assert!(u.find("cand").unwrap() < u.find("REF").unwrap());
    }

    #[test]
    fn aggregate_relative() {
        let o = |c, r| JudgeOutcome {
            qid: String::new(),
            score_candidate: c,
            score_reference: r,
            relative_pct: 100.0 * c / r,
            rationale: String::new(),
        };
        assert_eq!(relative_score(&[o(8.0, 10.0), o(6.0, 10.0)]), Some(70.0));
        assert_eq!(relative_score(&[]), None);
    }
}
