//! Prompt templates. Defaults are compiled in from `prompts/*.txt`; a
//! directory of same-named files overrides them one by one.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot read prompt template {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("template {template} leaves placeholder {{{placeholder}}} unfilled")]
    Unfilled {
        template: &'static str,
        placeholder: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub extract: String,
    pub summarize: String,
    pub classify: String,
    pub feedback: String,
    pub refine: String,
    pub repair: String,
    pub caption: String,
    pub resolve_style: String,
    pub plan: String,
    pub plan_baseline: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            extract: include_str!("../prompts/extract.txt").into(),
            summarize: include_str!("../prompts/summarize.txt").into(),
            classify: include_str!("../prompts/classify.txt").into(),
            feedback: include_str!("../prompts/feedback.txt").into(),
            refine: include_str!("../prompts/refine.txt").into(),
            repair: include_str!("../prompts/repair.txt").into(),
            caption: include_str!("../prompts/caption.txt").into(),
            resolve_style: include_str!("../prompts/resolve_style.txt").into(),
            plan: include_str!("../prompts/plan.txt").into(),
            plan_baseline: include_str!("../prompts/plan_baseline.txt").into(),
        }
    }
}

impl PromptTemplates {
    /// Defaults, with any `<name>.txt` found in `dir` taking precedence.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut t = Self::default();
        for (name, slot) in [
            ("extract", &mut t.extract),
            ("summarize", &mut t.summarize),
            ("classify", &mut t.classify),
            ("feedback", &mut t.feedback),
            ("refine", &mut t.refine),
            ("repair", &mut t.repair),
            ("caption", &mut t.caption),
            ("resolve_style", &mut t.resolve_style),
            ("plan", &mut t.plan),
            ("plan_baseline", &mut t.plan_baseline),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
        }
        Ok(t)
    }
}

/// Substitutes `{key}` for each pair. Fails if a `{lowercase_word}`
/// placeholder remains afterwards.
pub fn fill(
    name: &'static str,
    template: &str,
    vars: &[(&str, &str)],
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}');
        let word = close.map(|c| &after[..c]);
        match word {
            Some(w) if !w.is_empty() && w.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') => {
                match vars.iter().find(|(k, _)| *k == w) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        return Err(PromptError::Unfilled {
                            template: name,
                            placeholder: w.to_string(),
                        })
                    }
                }
                rest = &after[w.len() + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fills_and_keeps_json_braces() {
        let s = fill(
            "t",
            r#"{style}: {"a": [1]} {x}"#,
            &[("style", "flat"), ("x", "{y}")],
        )
        .unwrap();
        assert_eq!(s, r#"flat: {"a": [1]} {y}"#);
    }

    #[test]
    fn unfilled_placeholder_is_an_error() {
        assert!(matches!(
            fill("t", "{style} {oops}", &[("style", "a")]),
            Err(PromptError::Unfilled { .. })
        ));
    }

    #[test]
    fn defaults_use_only_known_placeholders() {
        let t = PromptTemplates::default();
        let all = [
            ("style", "s"),
            ("positives", "p"),
            ("negatives", "n"),
            ("knowledge", "k"),
            ("feedback", "f"),
            ("option_a", "a"),
            ("option_b", "b"),
            ("polarity", "x"),
            ("error", "e"),
            ("instruction", "i"),
            ("caption", "c"),
            ("styles", "ss"),
        ];
        for (name, body) in [
            ("extract", &t.extract),
            ("summarize", &t.summarize),
            ("classify", &t.classify),
            ("feedback", &t.feedback),
            ("refine", &t.refine),
            ("repair", &t.repair),
            ("caption", &t.caption),
            ("resolve_style", &t.resolve_style),
            ("plan", &t.plan),
            ("plan_baseline", &t.plan_baseline),
        ] {
            fill(name, body, &all).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn directory_override() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("summarize.txt"), "short {knowledge}").unwrap();
        let t = PromptTemplates::load_dir(dir.path()).unwrap();
        assert_eq!(t.summarize, "short {knowledge}");
        assert_eq!(t.extract, PromptTemplates::default().extract);
    }
}
