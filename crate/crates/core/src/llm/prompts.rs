//! Prompt templates for generation, refinement, judging and reply repair.
//!
//! Built-in templates ship with the crate; any of them can be replaced by a
//! file at run time. Placeholders are `{name}` and are substituted in a
//! single pass, so text inserted for one placeholder is never re-expanded.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

const SYSTEM: &str = include_str!("../../templates/system.txt");
const GENERATE_DEFAULT: &str = include_str!("../../templates/generate_default.txt");
const REFINE: &str = include_str!("../../templates/refine.txt");
const JUDGE: &str = include_str!("../../templates/judge.txt");
const REPAIR: &str = include_str!("../../templates/repair.txt");

/// Replaces `{key}` occurrences whose key is in `vars`; other braces are
/// left untouched.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let key = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Optional file overrides for the built-in templates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplatePaths {
    pub system: Option<String>,
    pub refine: Option<String>,
    pub judge: Option<String>,
    pub repair: Option<String>,
    /// Generation templates by id.
    pub generate: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub system: String,
    pub refine: String,
    pub judge: String,
    pub repair: String,
    pub generate: BTreeMap<String, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            system: SYSTEM.to_owned(),
            refine: REFINE.to_owned(),
            judge: JUDGE.to_owned(),
            repair: REPAIR.to_owned(),
            generate: BTreeMap::from([("default".to_owned(), GENERATE_DEFAULT.to_owned())]),
        }
    }
}

impl PromptTemplates {
    /// Built-ins with any configured files layered on top. Relative paths
    /// resolve against `base`.
    pub fn load(paths: &TemplatePaths, base: &Path) -> std::io::Result<Self> {
        let read = |p: &str| std::fs::read_to_string(base.join(p));
        let mut t = Self::default();
        if let Some(p) = &paths.system {
            t.system = read(p)?;
        }
        if let Some(p) = &paths.refine {
            t.refine = read(p)?;
        }
        if let Some(p) = &paths.judge {
            t.judge = read(p)?;
        }
        if let Some(p) = &paths.repair {
            t.repair = read(p)?;
        }
        for (id, p) in &paths.generate {
            t.generate.insert(id.clone(), read(p)?);
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_single_pass() {
        let out = render("A {x} B {y} {z}", &[("x", "{y}"), ("y", "2")]);
        assert_eq!(out, "A {y} B 2 {z}");
    }

    #[test]
    fn judge_template_keeps_literal_json() {
        let t = PromptTemplates::default();
        let out = render(&t.judge, &[("instruction", "task")]);
        assert!(out.contains(r#"{"significant": true or false"#));
        assert!(out.contains("task"));
    }
}
