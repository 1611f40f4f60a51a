//! Instruction-following dataset construction: single-turn OCR examples from
//! templated instructions, and multi-turn conversations generated by an LLM
//! from two OCR results plus a caption.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::LazyLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::clustering::{cluster_seed, sample_indices, Assignment};
use crate::error::{Error, Result};
use crate::llmclient::{batch_chat, ChatBackend, ChatMessage, ChatRequest, TranscriptEntry};

pub const IMAGE_TOKEN: &str = "<image>";
pub const DEFAULT_GPT4_PER_CLUSTER: usize = 4_000;
/// 1-based positions, within the curator's keep-list, of the clusters that
/// feed LLM prompting.
pub const DEFAULT_GPT4_CLUSTER_ORDINALS: [usize; 4] = [3, 4, 6, 9];

const INSTRUCTIONS_TXT: &str = include_str!("../data/ocr_instructions.txt");
const SYSTEM_MESSAGE_TXT: &str = include_str!("../data/system_message.txt");
const FEWSHOTS_JSON: &str = include_str!("../data/fewshots.json");

/// The ten rewordings of "identify the text in this image".
pub static OCR_INSTRUCTIONS: LazyLock<Vec<String>> = LazyLock::new(|| {
    INSTRUCTIONS_TXT
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect()
});

pub fn system_message() -> &'static str {
    SYSTEM_MESSAGE_TXT.trim_end()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShot {
    pub ocr_a: String,
    pub ocr_b: String,
    pub caption: String,
    pub response: String,
}

impl FewShot {
    pub fn human_message(&self) -> String {
        three_line_message(&self.ocr_a, &self.ocr_b, &self.caption)
    }
}

pub fn default_fewshots() -> Vec<FewShot> {
    serde_json::from_str(FEWSHOTS_JSON).expect("few-shot data parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Human,
    Assistant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Noisy,
    Gpt4,
}

impl Source {
    fn prefix(self) -> &'static str {
        match self {
            Source::Noisy => "noisy",
            Source::Gpt4 => "gpt4",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

/// A training conversation. Serialized in the LLaVA layout:
/// `{"id", "image", "conversations": [{"from": "human"|"gpt", "value"}]}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub id: String,
    pub image_id: String,
    pub turns: Vec<Turn>,
    /// Recovered from the id prefix when reading files this crate wrote.
    pub source: Option<Source>,
}

#[derive(Serialize, Deserialize)]
struct LlavaTurn {
    from: String,
    value: String,
}

#[derive(Serialize, Deserialize)]
struct LlavaRecord {
    id: String,
    image: String,
    conversations: Vec<LlavaTurn>,
}

impl Serialize for Conversation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LlavaRecord {
            id: self.id.clone(),
            image: self.image_id.clone(),
            conversations: self
                .turns
                .iter()
                .map(|t| LlavaTurn {
                    from: match t.speaker {
                        Speaker::Human => "human",
                        Speaker::Assistant => "gpt",
                    }
                    .to_string(),
                    value: t.text.clone(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Conversation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = LlavaRecord::deserialize(d)?;
        let turns = rec
            .conversations
            .into_iter()
            .map(|t| {
                let speaker = match t.from.as_str() {
                    "human" => Speaker::Human,
                    "gpt" => Speaker::Assistant,
                    other => return Err(serde::de::Error::custom(format!("unknown speaker {other:?}"))),
                };
                Ok(Turn { speaker, text: t.value })
            })
            .collect::<std::result::Result<_, _>>()?;
        let source = [Source::Noisy, Source::Gpt4]
            .into_iter()
            .find(|s| rec.id.starts_with(&format!("{}_", s.prefix())));
        Ok(Conversation {
            id: rec.id,
            image_id: rec.image,
            turns,
            source,
        })
    }
}

/// Turns alternate human/assistant starting with human; the first human turn
/// holds exactly one image token and no other turn holds any.
pub fn validate_conversation(c: &Conversation) -> Result<()> {
    if c.turns.is_empty() {
        return Err(Error::validation(format!("{}: no turns", c.id)));
    }
    for (i, t) in c.turns.iter().enumerate() {
        let expected = if i % 2 == 0 { Speaker::Human } else { Speaker::Assistant };
        if t.speaker != expected {
            return Err(Error::validation(format!(
                "{}: turn {i} is {:?}, expected {expected:?}",
                c.id, t.speaker
            )));
        }
        let tokens = t.text.matches(IMAGE_TOKEN).count();
        let allowed = usize::from(i == 0);
        if tokens != allowed {
            return Err(Error::validation(format!(
                "{}: turn {i} has {tokens} {IMAGE_TOKEN} tokens, expected {allowed}",
                c.id
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub conversations: usize,
    pub errors: Vec<String>,
}

/// Parses and validates a conversation JSONL file's contents.
pub fn validate_jsonl(text: &str) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.conversations += 1;
        match serde_json::from_str::<Conversation>(line) {
            Ok(c) => {
                if let Err(e) = validate_conversation(&c) {
                    report.errors.push(format!("line {}: {e}", i + 1));
                }
            }
            Err(e) => report.errors.push(format!("line {}: {e}", i + 1)),
        }
    }
    report
}

pub(crate) fn seed_for_key(seed: u64, key: &str) -> u64 {
    let digest = artifact::sha256_hex(key.as_bytes());
    let prefix = u64::from_str_radix(&digest[..16], 16).expect("hex prefix");
    cluster_seed(seed, prefix as usize)
}

/// One single-turn example: a randomly chosen OCR instruction and the OCR
/// text, verbatim, as the answer. `None` when the OCR text is empty.
pub fn build_noisy_example(image_id: &str, paragraphs_text: &str, seed: u64) -> Option<Conversation> {
    if paragraphs_text.trim().is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instruction = &OCR_INSTRUCTIONS[rng.random_range(0..OCR_INSTRUCTIONS.len())];
    Some(Conversation {
        id: format!("{}_{image_id}", Source::Noisy.prefix()),
        image_id: image_id.to_string(),
        turns: vec![
            Turn {
                speaker: Speaker::Human,
                text: format!("{IMAGE_TOKEN}\n{instruction}"),
            },
            Turn {
                speaker: Speaker::Assistant,
                text: paragraphs_text.to_string(),
            },
        ],
        source: Some(Source::Noisy),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcrText {
    pub image_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Default)]
pub struct NoisyBuild {
    pub conversations: Vec<Conversation>,
    pub skipped_empty: usize,
}

/// Builds noisy examples in input order; each example's instruction is drawn
/// from a stream keyed by `(seed, image_id)`.
pub fn build_noisy_dataset(items: &[OcrText], seed: u64) -> NoisyBuild {
    let mut out = NoisyBuild::default();
    for item in items {
        match build_noisy_example(&item.image_id, &item.text, seed_for_key(seed, &item.image_id)) {
            Some(c) => out.conversations.push(c),
            None => out.skipped_empty += 1,
        }
    }
    out
}

/// Everything needed to prompt for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub fewshots: Vec<FewShot>,
    /// EasyOCR result.
    pub ocr_a: String,
    /// PaddleOCR result.
    pub ocr_b: String,
    pub caption: String,
}

impl PromptBundle {
    pub fn new(ocr_a: &str, ocr_b: &str, caption: &str) -> Self {
        PromptBundle {
            system: system_message().to_string(),
            fewshots: default_fewshots(),
            ocr_a: ocr_a.to_string(),
            ocr_b: ocr_b.to_string(),
            caption: caption.to_string(),
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// OCR A, OCR B and caption, one per line, unlabeled.
fn three_line_message(a: &str, b: &str, caption: &str) -> String {
    format!("{}\n{}\n{}", one_line(a), one_line(b), one_line(caption))
}

/// `[system] + (user, assistant) per few-shot + final user message`.
pub fn assemble_gpt4_prompt(b: &PromptBundle) -> Result<Vec<ChatMessage>> {
    if b.system.trim().is_empty() {
        return Err(Error::validation("system message is empty"));
    }
    if b.ocr_a.trim().is_empty() && b.ocr_b.trim().is_empty() {
        return Err(Error::validation("both OCR results are empty"));
    }
    let mut msgs = vec![ChatMessage::system(&b.system)];
    for shot in &b.fewshots {
        msgs.push(ChatMessage::user(shot.human_message()));
        msgs.push(ChatMessage::assistant(&shot.response));
    }
    msgs.push(ChatMessage::user(three_line_message(&b.ocr_a, &b.ocr_b, &b.caption)));
    Ok(msgs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    line.trim_start().strip_prefix(label).map(str::trim)
}

enum QaState {
    Preamble,
    InQuestion(String),
    InAnswer(String, Vec<String>),
}

fn finish_answer(question: String, lines: Vec<String>) -> QaPair {
    let answer = lines.join("\n").trim().to_string();
    QaPair { question, answer }
}

/// Strict `Question:` / `Answer:` parser. Text before the first question is
/// ignored; answer text runs until the next `Question:` line.
pub fn parse_qa(response: &str) -> Result<Vec<QaPair>> {
    parse_qa_inner(response).map_err(|(_, e)| e)
}

/// Like [`parse_qa`] but keeps the complete pairs before the first error.
pub fn parse_qa_salvage(response: &str) -> (Vec<QaPair>, Option<Error>) {
    match parse_qa_inner(response) {
        Ok(pairs) => (pairs, None),
        Err((pairs, e)) => (pairs, Some(e)),
    }
}

fn parse_qa_inner(response: &str) -> std::result::Result<Vec<QaPair>, (Vec<QaPair>, Error)> {
    let mut pairs = Vec::new();
    let mut state = QaState::Preamble;
    for (i, line) in response.lines().enumerate() {
        let line_no = i + 1;
        if let Some(q) = strip_label(line, "Question:") {
            state = match state {
                QaState::InQuestion(_) => {
                    let err = Error::parse(Some(line_no), format!("question {} has no answer", pairs.len() + 1));
                    return Err((pairs, err));
                }
                QaState::InAnswer(prev_q, lines) => {
                    pairs.push(finish_answer(prev_q, lines));
                    QaState::InQuestion(q.to_string())
                }
                QaState::Preamble => QaState::InQuestion(q.to_string()),
            };
        } else if let Some(a) = strip_label(line, "Answer:") {
            state = match state {
                QaState::InQuestion(q) => QaState::InAnswer(q, vec![a.to_string()]),
                QaState::Preamble => return Err((pairs, Error::parse(Some(line_no), "answer before any question"))),
                QaState::InAnswer(..) => {
                    let err = Error::parse(
                        Some(line_no),
                        format!("question {} has more than one answer", pairs.len() + 1),
                    );
                    return Err((pairs, err));
                }
            };
        } else {
            match &mut state {
                QaState::Preamble => {}
                QaState::InQuestion(q) => {
                    let extra = line.trim();
                    if !extra.is_empty() {
                        q.push(' ');
                        q.push_str(extra);
                    }
                }
                QaState::InAnswer(_, lines) => lines.push(line.to_string()),
            }
        }
    }
    match state {
        QaState::Preamble => Err((pairs, Error::parse(None, "no Question: found"))),
        QaState::InQuestion(_) => {
            let n = pairs.len() + 1;
            Err((pairs, Error::parse(None, format!("question {n} has no answer"))))
        }
        QaState::InAnswer(q, lines) => {
            pairs.push(finish_answer(q, lines));
            Ok(pairs)
        }
    }
}

/// Every `Question:` line's text, whether or not an answer follows.
pub fn extract_questions(response: &str) -> Vec<String> {
    response
        .lines()
        .filter_map(|l| strip_label(l, "Question:"))
        .filter(|q| !q.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn render_qa(pairs: &[QaPair]) -> String {
    pairs
        .iter()
        .map(|p| format!("Question: {}\nAnswer: {}", p.question, p.answer))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn qa_to_conversation(image_id: &str, pairs: &[QaPair]) -> Result<Conversation> {
    if pairs.is_empty() {
        return Err(Error::validation(format!("{image_id}: no question-answer pairs")));
    }
    let mut turns = Vec::with_capacity(pairs.len() * 2);
    for (i, p) in pairs.iter().enumerate() {
        let question = if i == 0 {
            format!("{IMAGE_TOKEN}\n{}", p.question)
        } else {
            p.question.clone()
        };
        turns.push(Turn {
            speaker: Speaker::Human,
            text: question,
        });
        turns.push(Turn {
            speaker: Speaker::Assistant,
            text: p.answer.clone(),
        });
    }
    Ok(Conversation {
        id: format!("{}_{image_id}", Source::Gpt4.prefix()),
        image_id: image_id.to_string(),
        turns,
        source: Some(Source::Gpt4),
    })
}

/// Samples `per_cluster` ids from each listed cluster, skipping `exclude`.
/// Output is cluster by cluster in the given order, input order within each.
pub fn select_gpt4_pool(
    assignments: &[Assignment],
    clusters: &[usize],
    per_cluster: usize,
    exclude: &HashSet<&str>,
    seed: u64,
) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(clusters.len() * per_cluster);
    for &c in clusters {
        let members: Vec<&str> = assignments
            .iter()
            .filter(|a| a.cluster == c && !exclude.contains(a.id.as_str()))
            .map(|a| a.id.as_str())
            .collect();
        if members.len() < per_cluster {
            return Err(Error::validation(format!(
                "cluster {c} has {} eligible images, need {per_cluster}",
                members.len()
            )));
        }
        let picked = sample_indices(members.len(), per_cluster, cluster_seed(seed, c))?;
        out.extend(picked.into_iter().map(|i| members[i].to_string()));
    }
    Ok(out)
}

/// Inputs for one LLM-generated conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gpt4Input {
    pub image_id: String,
    pub ocr_easy: String,
    pub ocr_paddle: String,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gpt4Failure {
    pub image_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct Gpt4Build {
    pub conversations: Vec<Conversation>,
    pub failures: Vec<Gpt4Failure>,
    /// Every completion received, for replay.
    pub transcript: Vec<TranscriptEntry>,
}

#[derive(Debug, Clone)]
pub struct Gpt4Options {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub max_in_flight: usize,
    /// Keep complete pairs from malformed responses instead of dropping them.
    pub salvage: bool,
}

pub fn gpt4_request_id(image_id: &str) -> String {
    format!("gpt4-{image_id}")
}

/// Prompts the backend once per input and converts parsed answers into
/// conversations. Output order follows input order; failures are per item.
pub async fn build_gpt4_dataset<B: ChatBackend>(inputs: &[Gpt4Input], backend: &B, opts: &Gpt4Options) -> Gpt4Build {
    let mut out = Gpt4Build::default();
    let mut requests = Vec::new();
    let mut request_items = Vec::new();
    for item in inputs {
        let bundle = PromptBundle::new(&item.ocr_easy, &item.ocr_paddle, &item.caption);
        match assemble_gpt4_prompt(&bundle) {
            Ok(messages) => {
                requests.push(ChatRequest {
                    model: opts.model.clone(),
                    messages,
                    temperature: opts.temperature,
                    max_tokens: opts.max_tokens,
                    request_id: gpt4_request_id(&item.image_id),
                });
                request_items.push(item);
            }
            Err(e) => out.failures.push(Gpt4Failure {
                image_id: item.image_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    let results = batch_chat(backend, requests, opts.max_in_flight).await;
    for (item, res) in request_items.into_iter().zip(results) {
        let fail = |e: String| Gpt4Failure {
            image_id: item.image_id.clone(),
            error: e,
        };
        let result = match res {
            Ok(r) => r,
            Err(e) => {
                out.failures.push(fail(e.to_string()));
                continue;
            }
        };
        out.transcript.push(TranscriptEntry {
            request_id: result.request_id.clone(),
            text: result.text.clone(),
        });
        let pairs = if opts.salvage {
            let (pairs, err) = parse_qa_salvage(&result.text);
            if let Some(e) = err {
                tracing::warn!(image_id = %item.image_id, error = %e, "salvaged partial response");
            }
            pairs
        } else {
            match parse_qa(&result.text) {
                Ok(p) => p,
                Err(e) => {
                    out.failures.push(fail(e.to_string()));
                    continue;
                }
            }
        };
        match qa_to_conversation(&item.image_id, &pairs) {
            Ok(c) => out.conversations.push(c),
            Err(e) => out.failures.push(fail(e.to_string())),
        }
    }
    out
}

/// Counts tokens for length statistics.
pub trait TokenCounter {
    fn name(&self) -> &str;
    fn count(&self, text: &str) -> usize;
}

/// Whitespace-separated words; a proxy for a subword tokenizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokens;

impl TokenCounter for WhitespaceTokens {
    fn name(&self) -> &str {
        "whitespace-proxy"
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub conversations: usize,
    pub avg_instruction_tokens: f64,
    pub avg_response_tokens: f64,
    pub tokenizer: String,
}

/// Average token length of human turns and of assistant turns, with the
/// image token removed before counting.
pub fn dataset_stats(text: &str, tokenizer: &dyn TokenCounter) -> Result<DatasetStats> {
    let mut conversations = 0;
    let (mut ins_tokens, mut ins_turns) = (0usize, 0usize);
    let (mut res_tokens, mut res_turns) = (0usize, 0usize);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: Conversation = serde_json::from_str(line).map_err(|e| Error::parse(Some(i + 1), e.to_string()))?;
        conversations += 1;
        for t in &c.turns {
            let n = tokenizer.count(&t.text.replace(IMAGE_TOKEN, " "));
            match t.speaker {
                Speaker::Human => {
                    ins_tokens += n;
                    ins_turns += 1;
                }
                Speaker::Assistant => {
                    res_tokens += n;
                    res_turns += 1;
                }
            }
        }
    }
    let avg = |tokens: usize, turns: usize| {
        if turns == 0 {
            0.0
        } else {
            tokens as f64 / turns as f64
        }
    };
    Ok(DatasetStats {
        conversations,
        avg_instruction_tokens: avg(ins_tokens, ins_turns),
        avg_response_tokens: avg(res_tokens, res_turns),
        tokenizer: tokenizer.name().to_string(),
    })
}

/// Per-instruction counts over a noisy dataset, in instruction order.
pub fn instruction_histogram(conversations: &[Conversation]) -> BTreeMap<usize, usize> {
    let index: HashMap<&str, usize> = OCR_INSTRUCTIONS
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut h = BTreeMap::new();
    for c in conversations {
        if let Some(first) = c.turns.first() {
            let instr = first.text.trim_start_matches(IMAGE_TOKEN).trim();
            if let Some(&i) = index.get(instr) {
                *h.entry(i).or_default() += 1;
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_distinct_instructions() {
        assert_eq!(OCR_INSTRUCTIONS.len(), 10);
        let set: HashSet<_> = OCR_INSTRUCTIONS.iter().collect();
        assert_eq!(set.len(), 10);
        assert!(OCR_INSTRUCTIONS.contains(&"Identify any text visible in the image provided.".to_string()));
    }

    #[test]
    fn noisy_example_shape() {
        let c = build_noisy_example("img1", "HELLO\n\nWORLD", 3).unwrap();
        assert_eq!(c.turns.len(), 2);
        assert!(c.turns[0].text.starts_with("<image>\n"));
        let instr = c.turns[0].text.trim_start_matches("<image>\n");
        assert!(OCR_INSTRUCTIONS.iter().any(|s| s == instr));
        assert_eq!(c.turns[1].text, "HELLO\n\nWORLD");
        assert_eq!(c.source, Some(Source::Noisy));
        validate_conversation(&c).unwrap();
        assert_eq!(build_noisy_example("img1", "HELLO\n\nWORLD", 3), Some(c));
    }

    #[test]
    fn noisy_example_skips_empty_text() {
        assert!(build_noisy_example("img", "  \n", 1).is_none());
        let b = build_noisy_dataset(
            &[
                OcrText {
                    image_id: "a".into(),
                    text: "x".into(),
                },
                OcrText {
                    image_id: "b".into(),
                    text: "".into(),
                },
            ],
            0,
        );
        assert_eq!(b.conversations.len(), 1);
        assert_eq!(b.skipped_empty, 1);
    }

    #[test]
    fn llava_serialization() {
        let c = build_noisy_example("img1", "TEXT", 0).unwrap();
        let json = serde_json::to_value(&c).unwrap();
        assert_eq!(json["id"], "noisy_img1");
        assert_eq!(json["image"], "img1");
        assert_eq!(json["conversations"][0]["from"], "human");
        assert_eq!(json["conversations"][1]["from"], "gpt");
        assert_eq!(json["conversations"][1]["value"], "TEXT");
        let back: Conversation = serde_json::from_value(json).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validator_rejects_bad_shapes() {
        let mut c = build_noisy_example("i", "t", 0).unwrap();
        c.turns.swap(0, 1);
        assert!(validate_conversation(&c).is_err());
        let mut c = build_noisy_example("i", "t", 0).unwrap();
        c.turns[1].text.push_str(" <image>");
        assert!(validate_conversation(&c).is_err());
        let mut c = build_noisy_example("i", "t", 0).unwrap();
        c.turns[0].text = c.turns[0].text.replace(IMAGE_TOKEN, "");
        assert!(validate_conversation(&c).is_err());
        c.turns.clear();
        assert!(validate_conversation(&c).is_err());
    }

    #[test]
    fn default_prompt_has_six_messages() {
        let b = PromptBundle::new("ocr one", "ocr two", "a caption");
        let msgs = assemble_gpt4_prompt(&b).unwrap();
        assert_eq!(msgs.len(), 6);
        assert_eq!(msgs[0].content, system_message());
        assert_eq!(msgs[5].content, "ocr one\nocr two\na caption");
    }

    #[test]
    fn fewshot_caption_is_third_line() {
        let shots = default_fewshots();
        assert_eq!(shots.len(), 2);
        let b = PromptBundle::new(&shots[1].ocr_a, &shots[1].ocr_b, &shots[1].caption);
        let msgs = assemble_gpt4_prompt(&b).unwrap();
        let last = &msgs.last().unwrap().content;
        assert_eq!(last.lines().nth(2), Some("a close up of a baseball glove"));
        assert_eq!(
            msgs[1].content.lines().nth(2),
            Some("a girl is standing in a field with a rainbow")
        );
    }

    #[test]
    fn zero_fewshots_two_messages() {
        let mut b = PromptBundle::new("a", "", "");
        b.fewshots.clear();
        assert_eq!(assemble_gpt4_prompt(&b).unwrap().len(), 2);
    }

    #[test]
    fn both_ocr_empty_is_error() {
        assert!(assemble_gpt4_prompt(&PromptBundle::new(" ", "", "cap")).is_err());
    }

    #[test]
    fn parse_first_fewshot() {
        let shots = default_fewshots();
        let pairs = parse_qa(&shots[0].response).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(
            pairs[0].question,
            "What is the name of the devotional mentioned in the image?"
        );
        assert!(pairs[1].answer.starts_with("The song is special"));
    }

    #[test]
    fn parse_answer_without_question() {
        assert!(matches!(parse_qa("Answer: x"), Err(Error::Parse { .. })));
        assert!(parse_qa("just prose").is_err());
    }

    #[test]
    fn parse_question_without_answer_reports_index() {
        let err = parse_qa("Question: a?\nAnswer: b\nQuestion: c?\nQuestion: d?\nAnswer: e").unwrap_err();
        assert!(err.to_string().contains("question 2"), "{err}");
        let (kept, err) = parse_qa_salvage("Question: a?\nAnswer: b\nQuestion: c?\nQuestion: d?\nAnswer: e");
        assert_eq!(kept.len(), 1);
        assert!(err.is_some());
    }

    #[test]
    fn parse_multi_paragraph_answer() {
        let text = "Question: one?\nAnswer: first.\n  Question: two?\nAnswer: para one.\n\npara two.\nQuestion: three?\nAnswer: last.";
        let pairs = parse_qa(text).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[1].answer, "para one.\n\npara two.");
        assert_eq!(pairs[2].question, "three?");
    }

    #[test]
    fn qa_conversation_turns() {
        let p = |q: &str| QaPair {
            question: q.into(),
            answer: format!("ans {q}"),
        };
        let c = qa_to_conversation("img", &[p("a")]).unwrap();
        assert_eq!(c.turns.len(), 2);
        let c = qa_to_conversation("img", &[p("a"), p("b"), p("c")]).unwrap();
        assert_eq!(c.turns.len(), 6);
        validate_conversation(&c).unwrap();
        assert!(qa_to_conversation("img", &[]).is_err());
    }

    #[test]
    fn render_parse_round_trip_on_fewshot() {
        let shots = default_fewshots();
        let pairs = parse_qa(&shots[1].response).unwrap();
        assert_eq!(parse_qa(&render_qa(&pairs)).unwrap(), pairs);
    }

    fn toy_assignments() -> Vec<Assignment> {
        (0..40)
            .map(|i| Assignment {
                id: format!("id{i}"),
                cluster: i % 4,
                distance: 0.0,
            })
            .collect()
    }

    #[test]
    fn pool_one_per_cluster() {
        let pool = select_gpt4_pool(&toy_assignments(), &[0, 1, 2, 3], 1, &HashSet::new(), 5).unwrap();
        assert_eq!(pool.len(), 4);
        let a = toy_assignments();
        let clusters: Vec<usize> = pool
            .iter()
            .map(|id| a.iter().find(|x| &x.id == id).unwrap().cluster)
            .collect();
        assert_eq!(clusters, vec![0, 1, 2, 3]);
    }

    #[test]
    fn pool_respects_exclusion_and_shortage() {
        let a = toy_assignments();
        let exclude: HashSet<&str> = a
            .iter()
            .filter(|x| x.cluster == 0)
            .take(8)
            .map(|x| x.id.as_str())
            .collect();
        let pool = select_gpt4_pool(&a, &[0, 1], 2, &exclude, 1).unwrap();
        assert!(pool.iter().all(|id| !exclude.contains(id.as_str())));
        let err = select_gpt4_pool(&a, &[0], 3, &exclude, 1).unwrap_err();
        assert!(err.to_string().contains("cluster 0"));
    }

    #[test]
    fn stats_arithmetic() {
        let c = Conversation {
            id: "x".into(),
            image_id: "i".into(),
            turns: vec![
                Turn {
                    speaker: Speaker::Human,
                    text: "<image>\na b c".into(),
                },
                Turn {
                    speaker: Speaker::Assistant,
                    text: "d e".into(),
                },
            ],
            source: None,
        };
        let line = serde_json::to_string(&c).unwrap();
        let s = dataset_stats(&line, &WhitespaceTokens).unwrap();
        assert_eq!(
            (s.conversations, s.avg_instruction_tokens, s.avg_response_tokens),
            (1, 3.0, 2.0)
        );
        let empty = dataset_stats("", &WhitespaceTokens).unwrap();
        assert_eq!(
            (
                empty.conversations,
                empty.avg_instruction_tokens,
                empty.avg_response_tokens
            ),
            (0, 0.0, 0.0)
        );
        assert!(matches!(
            dataset_stats("{}\nnope", &WhitespaceTokens),
            Err(Error::Parse { line: Some(1), .. })
        ));
    }
}
