//! Instruction registry and prompt assembly in the fixed order instruction,
//! demonstrations, context, question.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llmio::{Message, Role};
use crate::model::Task;
use crate::serialize::{
    allocate_budget, truncate_to_budget, SerializedContext, TokenCounter, WhitespaceCounter,
    ANSWER_RESERVE, CONTEXT_WINDOW,
};

pub const PROMPT_VERSION: &str = "instr-v1";

const EXTRACTION_PLAIN: &str = "Answer the question about the patient using only the patient \
information provided, formatting each answer as column name: value.";

const EXTRACTION_GUIDED: &str = "You extract facts from a patient record to answer a question.
1. Read the patient information line by line.
2. Identify the features the question asks about.
3. Copy each requested value exactly as it appears in the record.
4. Write the answer as column name: value pairs separated by \"; \".
5. If the record holds no matching value, answer no results.";

const RETRIEVAL_PLAIN: &str =
    "Decide whether the patient matches the question and begin your answer \
with yes or no.";

const RETRIEVAL_GUIDED: &str =
    "You judge whether a patient record is relevant to a search question.
1. Read the conditions stated in the question.
2. Check each condition against the patient information.
3. The patient is relevant only if every condition holds.
4. Begin your answer with yes if the patient is relevant and no otherwise.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InstructionSpec {
    pub task: Task,
    pub guided: bool,
    pub text: &'static str,
    pub version: &'static str,
}

pub fn get_instruction(task: Task, guided: bool) -> InstructionSpec {
    let text = match (task, guided) {
        (Task::Extraction, false) => EXTRACTION_PLAIN,
        (Task::Extraction, true) => EXTRACTION_GUIDED,
        (Task::Retrieval, false) => RETRIEVAL_PLAIN,
        (Task::Retrieval, true) => RETRIEVAL_GUIDED,
    };
    InstructionSpec {
        task,
        guided,
        text,
        version: PROMPT_VERSION,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoAnswer {
    Text(String),
    Relevance(bool),
}

impl DemoAnswer {
    pub fn render(&self) -> &str {
        match self {
            DemoAnswer::Text(s) => s,
            DemoAnswer::Relevance(true) => "relevant",
            DemoAnswer::Relevance(false) => "no relevant",
        }
    }
}

/// One labeled in-context example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub context: String,
    pub question: String,
    pub answer: DemoAnswer,
}

pub fn format_demonstration(demo: &Demonstration) -> String {
    format!(
        "### Example\nPatient: {}\nQuestion: {}\nOutput: {}",
        demo.context,
        demo.question,
        demo.answer.render()
    )
}

/// Blocks separated by a blank line; no demonstrations gives "".
pub fn format_demonstrations(demos: &[Demonstration]) -> String {
    demos
        .iter()
        .map(format_demonstration)
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSpec {
    pub instruction: InstructionSpec,
    pub demonstrations: Vec<Demonstration>,
    pub context: SerializedContext,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub messages: Vec<Message>,
}

impl RenderedPrompt {
    /// System then user content, newline-joined.
    pub fn flatten(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("prompt is {overshoot} tokens over its budget of {budget}")]
    BudgetExceeded { overshoot: usize, budget: usize },
}

/// Token accounting: the window minus the answer reserve is available to
/// the prompt.
pub struct Budget<'a> {
    pub window: usize,
    pub reserve: usize,
    pub counter: &'a dyn TokenCounter,
}

impl Default for Budget<'_> {
    fn default() -> Self {
        Budget {
            window: CONTEXT_WINDOW,
            reserve: ANSWER_RESERVE,
            counter: &WhitespaceCounter,
        }
    }
}

impl Budget<'_> {
    pub fn available(&self) -> usize {
        self.window.saturating_sub(self.reserve)
    }
}

fn user_message(spec: &PromptSpec) -> String {
    let target = format!("Patient: {}\nQuestion: {}", spec.context.text, spec.query);
    if spec.demonstrations.is_empty() {
        target
    } else {
        format!(
            "{}\n\n{target}",
            format_demonstrations(&spec.demonstrations)
        )
    }
}

/// Renders the messages, failing when they exceed the budget.
pub fn assemble_prompt(spec: &PromptSpec, budget: &Budget) -> Result<RenderedPrompt, PromptError> {
    let prompt = RenderedPrompt {
        messages: vec![
            Message::system(spec.instruction.text),
            Message::user(user_message(spec)),
        ],
    };
    let used: usize = prompt
        .messages
        .iter()
        .map(|m| budget.counter.count(&m.content))
        .sum();
    let available = budget.available();
    if used > available {
        return Err(PromptError::BudgetExceeded {
            overshoot: used - available,
            budget: available,
        });
    }
    Ok(prompt)
}

/// Truncates the demonstration and target contexts to share what the fixed
/// parts leave free, then assembles.
pub fn fit_prompt(mut spec: PromptSpec, budget: &Budget) -> Result<RenderedPrompt, PromptError> {
    let c = budget.counter;
    let mut lengths: Vec<usize> = spec
        .demonstrations
        .iter()
        .map(|d| c.count(&d.context))
        .collect();
    lengths.push(c.count(&spec.context.text));
    let mut skeleton = spec.clone();
    skeleton.context.text.clear();
    skeleton
        .demonstrations
        .iter_mut()
        .for_each(|d| d.context.clear());
    let fixed = c.count(skeleton.instruction.text) + c.count(&user_message(&skeleton));
    let caps = allocate_budget(&lengths, budget.available().saturating_sub(fixed));

    for (d, cap) in spec.demonstrations.iter_mut().zip(&caps) {
        if cap.max(&1) < &c.count(&d.context) {
            d.context = truncate_to_budget(&d.context, (*cap).max(1), c).0;
        }
    }
    let cap = (*caps.last().unwrap_or(&0)).max(1);
    if cap < c.count(&spec.context.text) {
        let (text, cut) = truncate_to_budget(&spec.context.text, cap, c);
        spec.context.text = text;
        spec.context.truncated |= cut;
    }
    assemble_prompt(&spec, budget)
}

#[derive(Debug, Serialize)]
struct DumpLine<'a> {
    id: &'a str,
    messages: &'a [Message],
}

/// JSON-lines audit dump, one `{id, messages}` object per prompt.
pub fn write_prompt_dump<'a>(
    path: &Path,
    prompts: impl IntoIterator<Item = (&'a str, &'a RenderedPrompt)>,
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (id, p) in prompts {
        let line = serde_json::to_string(&DumpLine {
            id,
            messages: &p.messages,
        })
        .map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    out.flush()
}
