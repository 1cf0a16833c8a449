use super::ProviderError;
use crate::task::Task;
use sha2::{Digest, Sha256};

pub const PROMPT_PLACEHOLDER: &str = "{{Prompt}}";
pub const LANGUAGE_PLACEHOLDER: &str = "{{Language}}";

/// Completion prompt used for candidate generation.
pub const DEFAULT_GENERATION_TEMPLATE: &str = "Please continue to complete the function. You are not allowed to modify the given code and do the completion only. Please return all completed functions in a code block. Here is the given code to complete:\n```{{Language}}\n{{Prompt}}\n```\n";

/// Prompt used to ask a model for assertion-style tests.
pub const DEFAULT_TEST_TEMPLATE: &str = "Below is a programming task and a reference solution written in {{Language}}. Write independent test cases for the function `{{EntryPoint}}`. Each test case must be a short assertion-style snippet that calls the function and checks its result, written in {{Language}}. Put every test case in its own code block and do not repeat the solution.\n\nTask:\n{{Prompt}}\n\nReference solution:\n```{{Language}}\n{{Solution}}\n```\n";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, ProviderError> {
        let text = text.into();
        if !text.contains(PROMPT_PLACEHOLDER) {
            return Err(ProviderError::Config(format!(
                "prompt template has no {PROMPT_PLACEHOLDER} placeholder"
            )));
        }
        Ok(PromptTemplate { text })
    }

    pub fn generation() -> Self {
        PromptTemplate {
            text: DEFAULT_GENERATION_TEMPLATE.to_string(),
        }
    }

    pub fn test_synthesis() -> Self {
        PromptTemplate {
            text: DEFAULT_TEST_TEMPLATE.to_string(),
        }
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Self::new(text)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn render(&self, task: &Task) -> String {
        let entry = task.entry_point().unwrap_or_else(|| "solution".to_string());
        // The prompt goes in last so placeholders inside task text stay literal.
        let mut parts = self.text.split(PROMPT_PLACEHOLDER);
        let fill = |s: &str| {
            s.replace(LANGUAGE_PLACEHOLDER, task.language.as_str())
                .replace("{{EntryPoint}}", &entry)
                .replace("{{Solution}}", &task.initial_solution)
        };
        let mut out = fill(parts.next().unwrap_or_default());
        for rest in parts {
            out.push_str(&task.instruction);
            out.push_str(&fill(rest));
        }
        out
    }
}

/// Renders the generation prompt for `task`.
pub fn build_prompt(task: &Task, template: &PromptTemplate) -> Result<String, ProviderError> {
    if task.instruction.trim().is_empty() {
        return Err(ProviderError::Config(format!("task {} has an empty instruction", task.id)));
    }
    Ok(template.render(task))
}

pub fn fingerprint(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}
