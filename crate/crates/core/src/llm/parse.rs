//! Parsing of labeled fenced blocks and judge verdicts out of completions.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FencedBlock {
    pub label: String,
    pub body: String,
}

/// Extracts every triple-backtick block. The label is the first word after
/// the opening fence, lowercased. Unterminated blocks are ignored.
pub fn fenced_blocks(text: &str) -> Vec<FencedBlock> {
    let mut out = Vec::new();
    let mut open: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        match open.as_mut() {
            None => {
                if let Some(rest) = trimmed.strip_prefix("```") {
                    let label = rest
                        .split_whitespace()
                        .next()
                        .unwrap_or("")
                        .to_ascii_lowercase();
                    open = Some((label, Vec::new()));
                }
            }
            Some((_, body)) => {
                if trimmed.trim_end() == "```" {
                    let (label, body) = open.take().expect("open block");
                    let mut text = body.join("\n");
                    if !text.is_empty() {
                        text.push('\n');
                    }
                    out.push(FencedBlock { label, body: text });
                } else {
                    body.push(line);
                }
            }
        }
    }
    out
}

const CODE_LABELS: [&str; 4] = ["code", "python", "py", ""];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedTask {
    pub instruction: String,
    pub code: String,
    pub tests: String,
}

fn single<'a>(blocks: &'a [FencedBlock], label: &str) -> Result<&'a FencedBlock, String> {
    let found: Vec<&FencedBlock> = blocks.iter().filter(|b| b.label == label).collect();
    match found.as_slice() {
        [one] => Ok(one),
        [] => Err(format!("missing ```{label} block")),
        _ => Err(format!("{} ```{label} blocks, expected one", found.len())),
    }
}

/// Reads the `instruction`, `code` and `tests` blocks of a generation reply.
pub fn parse_generated_task(text: &str) -> Result<GeneratedTask, String> {
    let blocks = fenced_blocks(text);
    let instruction = single(&blocks, "instruction")?.body.trim().to_owned();
    if instruction.is_empty() {
        return Err("instruction block is empty".into());
    }
    let code = single(&blocks, "code")?.body.clone();
    let tests = single(&blocks, "tests")?.body.clone();
    if code.trim().is_empty() {
        return Err("code block is empty".into());
    }
    if tests.trim().is_empty() {
        return Err("tests block is empty".into());
    }
    Ok(GeneratedTask {
        instruction,
        code,
        tests,
    })
}

/// Returns the one code block in a refinement reply.
pub fn parse_single_code_block(text: &str) -> Result<String, String> {
    let code: Vec<FencedBlock> = fenced_blocks(text)
        .into_iter()
        .filter(|b| CODE_LABELS.contains(&b.label.as_str()))
        .collect();
    match code.as_slice() {
        [one] if !one.body.trim().is_empty() => Ok(one.body.clone()),
        [_] => Err("code block is empty".into()),
        [] => Err("no code block in reply".into()),
        many => Err(format!(
            "{} code blocks in reply, expected exactly one",
            many.len()
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeVerdict {
    pub significant: bool,
    pub reason: String,
}

/// Parses a judge reply: a bare JSON object or a single ```json block.
pub fn parse_judge_verdict(text: &str) -> Result<JudgeVerdict, String> {
    let trimmed = text.trim();
    let payload = if trimmed.starts_with('{') {
        trimmed.to_owned()
    } else {
        let blocks: Vec<FencedBlock> = fenced_blocks(trimmed)
            .into_iter()
            .filter(|b| b.label == "json")
            .collect();
        match blocks.as_slice() {
            [one] => one.body.trim().to_owned(),
            _ => return Err("reply is not a JSON object".into()),
        }
    };
    serde_json::from_str(&payload).map_err(|e| format!("invalid verdict JSON: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "Here you go.\n```instruction\nWrite add(a, b).\n```\n```code\ndef add(a, b):\n    return a + b\n```\n```tests\nfrom solution import add\nassert add(1, 2) == 3\n```\n";

    #[test]
    fn generation_reply() {
        let t = parse_generated_task(GOOD).unwrap();
        assert_eq!(t.instruction, "Write add(a, b).");
        assert_eq!(t.code, "def add(a, b):\n    return a + b\n");
        assert!(t.tests.starts_with("from solution import add"));
    }

    #[test]
    fn generation_reply_missing_tests() {
        let text = GOOD.split("```tests").next().unwrap();
        assert_eq!(
            parse_generated_task(text).unwrap_err(),
            "missing ```tests block"
        );
    }

    #[test]
    fn generation_reply_empty_instruction() {
        let text = GOOD.replace("Write add(a, b).", "   ");
        assert!(parse_generated_task(&text).is_err());
    }

    #[test]
    fn single_code_block() {
        let reply = "The bug was an off-by-one.\n```python\ndef f():\n    return 2\n```\nThat should do it.";
        assert_eq!(
            parse_single_code_block(reply).unwrap(),
            "def f():\n    return 2\n"
        );
        let two = "```python\na = 1\n```\n```python\nb = 2\n```";
        assert!(parse_single_code_block(two).is_err());
        assert!(parse_single_code_block("no code").is_err());
    }

    #[test]
    fn judge_replies() {
        let v = parse_judge_verdict(r#"{"significant": true, "reason": "fixes bound"}"#).unwrap();
        assert!(v.significant);
        let fenced = "```json\n{\"significant\": false, \"reason\": \"rename\"}\n```";
        assert!(!parse_judge_verdict(fenced).unwrap().significant);
        assert!(parse_judge_verdict("yes it is significant").is_err());
        assert!(parse_judge_verdict(r#"{"significant": "yes", "reason": ""}"#).is_err());
    }
}
