//! Prompt templates: a system message, a task description and a user message
//! with `{name}` placeholders, for the zero-shot and the evolution prompt.

use crate::tasks::{PromptFields, TaskFamily};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

const TSP: &str = include_str!("../../templates/tsp.toml");
const SYMREG: &str = include_str!("../../templates/symreg.toml");
const BINPACK: &str = include_str!("../../templates/binpack.toml");

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template file: {0}")]
    Io(#[from] std::io::Error),
    #[error("template syntax: {0}")]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Section {
    pub system: String,
    #[serde(default)]
    pub task_desc: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Templates {
    pub zero_shot: Section,
    pub evolve: Section,
}

/// Replace every `{name}` whose name is in `vars`; other braces are left
/// alone so JSON examples survive.
pub fn render(template: &str, vars: &BTreeMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open + 1..];
        let name_end = tail.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'));
        match name_end {
            Some(end) if tail[end..].starts_with('}') && end > 0 => match vars.get(&tail[..end]) {
                Some(value) => {
                    out.push_str(value);
                    rest = &tail[end + 1..];
                }
                None => {
                    out.push('{');
                    rest = tail;
                }
            },
            _ => {
                out.push('{');
                rest = tail;
            }
        }
    }
    out.push_str(rest);
    out
}

impl Section {
    /// Render `(system, user)`.
    pub fn render(&self, fields: &PromptFields, parents: &str, num_parents: usize) -> (String, String) {
        let mut vars = BTreeMap::new();
        vars.insert("question", fields.question.clone());
        vars.insert("n", fields.n.to_string());
        vars.insert("n_minus_1", fields.n.saturating_sub(1).to_string());
        vars.insert("dataset", fields.dataset.clone());
        vars.insert("variables", fields.variables.clone());
        vars.insert("parents", parents.to_string());
        vars.insert("num_parents", num_parents.to_string());
        let desc = render(&self.task_desc, &vars);
        vars.insert("task_desc", desc);
        (render(&self.system, &vars), render(self.user.trim_start(), &vars))
    }
}

impl Templates {
    pub fn from_toml(text: &str) -> Result<Self, TemplateError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, TemplateError> {
        Templates::from_toml(&std::fs::read_to_string(path)?)
    }

    /// The built-in templates for a task family.
    pub fn for_family(family: TaskFamily) -> Self {
        let text = match family {
            TaskFamily::Tsp => TSP,
            TaskFamily::Symreg => SYMREG,
            TaskFamily::Binpack => BINPACK,
        };
        Templates::from_toml(text).expect("built-in templates parse")
    }
}
