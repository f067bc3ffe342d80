//! Shared fixtures: twenty small Python tasks and a scripted transcript
//! whose outcomes are counted by hand below.
//!
//! | task | path                                   | LLM calls |
//! |------|----------------------------------------|-----------|
//! | t01-t04 | pass at iteration 0                 | 0         |
//! | t05-t08 | fixed by one refinement, judged ok  | 2 each    |
//! | t09  | unparsable refine reply, repaired      | 3         |
//! | t10  | HTTP 429 then fix                      | 3         |
//! | t11  | infinite loop (timeout), then fix      | 2         |
//! | t12  | fixed at iteration 2                   | 3         |
//! | t13  | fixed at iteration 3                   | 4         |
//! | t14  | comments-only rejected diff            | 1         |
//! | t15  | rejected diff longer than 20 lines     | 1         |
//! | t16  | judge: not significant                 | 2         |
//! | t17  | never fixed (assert failures)          | 5         |
//! | t18  | never fixed (ZeroDivisionError)        | 5         |
//! | t19  | HTTP 401, trace aborted                | 1         |
//! | t20  | unparsable judge reply, repaired       | 3         |
//!
//! Total 41 calls, 10 accepted pairs.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

pub const EXPECTED_CALLS: u64 = 41;
pub const EXPECTED_ACCEPTED: u64 = 10;
pub const EXPECTED_TRACES: u64 = 19;
pub const EXPECTED_EXECUTIONS: u64 = 45;

pub struct Fixture {
    pub dir: PathBuf,
    pub tasks: PathBuf,
    pub transcript: PathBuf,
    pub config: PathBuf,
}

fn fix(code: &str) -> Value {
    json!({ "content": format!("Here is the corrected code.\n\n```python\n{code}```\n") })
}

fn judge(significant: bool) -> Value {
    json!({ "content": json!({"significant": significant, "reason": "logic changed"}).to_string() })
}

fn text(s: &str) -> Value {
    json!({ "content": s })
}

fn status(code: u16) -> Value {
    json!({ "status": code, "body": {"error": {"message": "scripted"}} })
}

struct Task {
    id: &'static str,
    instruction: &'static str,
    code: String,
    tests: &'static str,
    replies: Vec<Value>,
}

fn long_table() -> String {
    let mut s = String::from("def table():\n    out = []\n");
    for i in 0..22 {
        s.push_str(&format!("    out.append({})\n", i * 2 + 1));
    }
    s.push_str("    return out\n");
    s
}

fn tasks() -> Vec<Task> {
    let ok = |id, instruction, code: &str, tests| Task {
        id,
        instruction,
        code: code.to_owned(),
        tests,
        replies: vec![],
    };
    vec![
        ok("t01", "Add two numbers.", "def add(a, b):\n    return a + b\n", "from solution import add\nassert add(2, 3) == 5\n"),
        ok("t02", "Multiply two numbers.", "def mul(a, b):\n    return a * b\n", "from solution import mul\nassert mul(2, 3) == 6\n"),
        ok("t03", "Negate a number.", "def neg(a):\n    return -a\n", "from solution import neg\nassert neg(4) == -4\n"),
        ok("t04", "Join two strings.", "def join(a, b):\n    return a + b\n", "from solution import join\nassert join('a', 'b') == 'ab'\n"),
        Task {
            id: "t05",
            instruction: "Sum the integers from 1 to n inclusive.",
            code: "def sum_to(n):\n    total = 0\n    for i in range(n):\n        total += i\n    return total\n".into(),
            tests: "from solution import sum_to\nassert sum_to(3) == 6\nassert sum_to(0) == 0\n",
            replies: vec![
                fix("def sum_to(n):\n    total = 0\n    for i in range(n + 1):\n        total += i\n    return total\n"),
                judge(true),
            ],
        },
        Task {
            id: "t06",
            instruction: "Return the largest element of a list.",
            code: "def largest(xs):\n    return min(xs)\n".into(),
            tests: "from solution import largest\nassert largest([1, 5, 2]) == 5\n",
            replies: vec![fix("def largest(xs):\n    return max(xs)\n"), judge(true)],
        },
        Task {
            id: "t07",
            instruction: "Return True when x is even.",
            code: "def is_even(x):\n    return x % 2 == 1\n".into(),
            tests: "from solution import is_even\nassert is_even(4)\nassert not is_even(3)\n",
            replies: vec![fix("def is_even(x):\n    return x % 2 == 0\n"), judge(true)],
        },
        Task {
            id: "t08",
            instruction: "Format n as 'n=<n>'.",
            code: "def label(n):\n    return 'n=' + n\n".into(),
            tests: "from solution import label\nassert label(3) == 'n=3'\n",
            replies: vec![fix("def label(n):\n    return 'n=' + str(n)\n"), judge(true)],
        },
        Task {
            id: "t09",
            instruction: "Square a number.",
            code: "def square(x):\n    return x * 2\n".into(),
            tests: "from solution import square\nassert square(3) == 9\n",
            replies: vec![
                text("The bug is that it doubles instead of squaring."),
                fix("def square(x):\n    return x * x\n"),
                judge(true),
            ],
        },
        Task {
            id: "t10",
            instruction: "Return the absolute value of x.",
            code: "def absolute(x):\n    return x\n".into(),
            tests: "from solution import absolute\nassert absolute(-2) == 2\n",
            replies: vec![
                status(429),
                fix("def absolute(x):\n    return x if x >= 0 else -x\n"),
                judge(true),
            ],
        },
        Task {
            id: "t11",
            instruction: "Count down from n to 0 and return the number of steps.",
            code: "def steps(n):\n    count = 0\n    while n != 0:\n        count += 1\n    return count\n".into(),
            tests: "from solution import steps\nassert steps(3) == 3\n",
            replies: vec![
                fix("def steps(n):\n    count = 0\n    while n > 0:\n        n -= 1\n        count += 1\n    return count\n"),
                judge(true),
            ],
        },
        Task {
            id: "t12",
            instruction: "Return the last element of a list.",
            code: "def last(xs):\n    return xs[0]\n".into(),
            tests: "from solution import last\nassert last([1, 2, 3]) == 3\n",
            replies: vec![
                fix("def last(xs):\n    return xs[1]\n"),
                fix("def last(xs):\n    return xs[-1]\n"),
                judge(true),
            ],
        },
        Task {
            id: "t13",
            instruction: "Return the number of vowels in s.",
            code: "def vowels(s):\n    return len(s)\n".into(),
            tests: "from solution import vowels\nassert vowels('banana') == 3\nassert vowels('sky') == 0\n",
            replies: vec![
                fix("def vowels(s):\n    return s.count('a') + 1\n"),
                fix("def vowels(s):\n    return sum(1 for c in s if c in 'eiou')\n"),
                fix("def vowels(s):\n    return sum(1 for c in s if c in 'aeiou')\n"),
                judge(true),
            ],
        },
        Task {
            id: "t14",
            instruction: "Clamp x to be non-negative.",
            code: "def clamp(x):\n    # todo: clamp below at zero\n    return x\n".into(),
            tests: "from solution import clamp\nassert clamp(-5) == 0\n",
            replies: vec![fix("def clamp(x):\n    x = max(x, 0)\n    return x\n")],
        },
        Task {
            id: "t15",
            instruction: "Return the first 22 even numbers starting at 0.",
            code: long_table(),
            tests: "from solution import table\nassert table() == list(range(0, 44, 2))\n",
            replies: vec![fix("def table():\n    return list(range(0, 44, 2))\n")],
        },
        Task {
            id: "t16",
            instruction: "Return the length of a list.",
            code: "def size(xs):\n    return len(xs) + 1\n".into(),
            tests: "from solution import size\nassert size([1, 2]) == 2\n",
            replies: vec![fix("def size(xs):\n    return len(xs)\n"), judge(false)],
        },
        Task {
            id: "t17",
            instruction: "Return the string reversed.",
            code: "def rev(s):\n    return s\n".into(),
            tests: "from solution import rev\nassert rev('abc') == 'cba'\n",
            replies: (0..5)
                .map(|k| fix(&format!("def rev(s):\n    return s[{k}:]\n")))
                .collect(),
        },
        Task {
            id: "t18",
            instruction: "Return the mean of a list.",
            code: "def mean(xs):\n    return sum(xs) / 0\n".into(),
            tests: "from solution import mean\nassert mean([2, 4]) == 3\n",
            replies: (0..5)
                .map(|k| fix(&format!("def mean(xs):\n    return sum(xs) / (len(xs) * {k} - {k} * 2)\n")))
                .collect(),
        },
        Task {
            id: "t19",
            instruction: "Return x plus one.",
            code: "def inc(x):\n    return x\n".into(),
            tests: "from solution import inc\nassert inc(1) == 2\n",
            replies: vec![status(401)],
        },
        Task {
            id: "t20",
            instruction: "Return the minimum of two numbers.",
            code: "def smaller(a, b):\n    return a if a > b else b\n".into(),
            tests: "from solution import smaller\nassert smaller(1, 2) == 1\n",
            replies: vec![
                fix("def smaller(a, b):\n    return a if a < b else b\n"),
                text("Significant, the comparison was flipped."),
                judge(true),
            ],
        },
    ]
}

/// Writes tasks, transcript and config into `dir`.
pub fn write_fixture(dir: &Path) -> Fixture {
    let tasks = tasks();
    let mut lines = String::new();
    let mut queues = serde_json::Map::new();
    for t in &tasks {
        let row =
            json!({"id": t.id, "instruction": t.instruction, "code": t.code, "tests": t.tests});
        lines.push_str(&row.to_string());
        lines.push('\n');
        if !t.replies.is_empty() {
            queues.insert(t.id.to_owned(), Value::Array(t.replies.clone()));
        }
    }
    let fx = Fixture {
        dir: dir.to_owned(),
        tasks: dir.join("tasks.jsonl"),
        transcript: dir.join("transcript.json"),
        config: dir.join("config.json"),
    };
    std::fs::write(&fx.tasks, lines).unwrap();
    std::fs::write(&fx.transcript, json!({ "tasks": queues }).to_string()).unwrap();
    std::fs::write(
        &fx.config,
        serde_json::to_string_pretty(&test_config()).unwrap(),
    )
    .unwrap();
    fx
}

/// Short timeouts and retry delays so the suite stays fast.
pub fn test_config() -> Value {
    json!({
        "run": {"worker_count": 4},
        "sandbox": {"wall_timeout_ms": 2000},
        "llm": {"retry": {"max_attempts": 3, "base_delay_ms": 1, "max_delay_ms": 4}}
    })
}
