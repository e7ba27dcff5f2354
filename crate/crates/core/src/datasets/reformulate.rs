use regex::Regex;
use serde::Deserialize;

const RULES_JSON: &str = include_str!("../../data/reformulation_rules.json");

#[derive(Debug, Deserialize)]
struct RuleSpec {
    name: String,
    pattern: String,
    template: String,
}

#[derive(Debug)]
pub struct Rule {
    pub name: String,
    pub pattern: Regex,
    pub template: String,
}

/// Ordered head-rewrite rules; the first match wins.
#[derive(Debug)]
pub struct RuleTable {
    rules: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reformulated {
    pub text: String,
    /// Name of the rule that fired.
    pub rule: Option<String>,
    /// No rule matched; the question was returned unchanged.
    pub warning: bool,
}

impl RuleTable {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let specs: Vec<RuleSpec> = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let rules = specs
            .into_iter()
            .map(|s| {
                let pattern =
                    Regex::new(&s.pattern).map_err(|e| format!("rule {}: {e}", s.name))?;
                Ok(Rule {
                    name: s.name,
                    pattern,
                    template: s.template,
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        Ok(RuleTable { rules })
    }

    /// The table shipped with the crate.
    pub fn builtin() -> &'static RuleTable {
        static TABLE: std::sync::OnceLock<RuleTable> = std::sync::OnceLock::new();
        TABLE.get_or_init(|| RuleTable::from_json(RULES_JSON).expect("shipped rule table is valid"))
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn apply(&self, question: &str) -> Reformulated {
        let q = question.trim();
        for rule in &self.rules {
            if let Some(caps) = rule.pattern.captures(q) {
                let mut text = String::new();
                caps.expand(&rule.template, &mut text);
                return Reformulated {
                    text,
                    rule: Some(rule.name.clone()),
                    warning: false,
                };
            }
        }
        log::warn!("no reformulation rule matched: {q}");
        Reformulated {
            text: question.to_string(),
            rule: None,
            warning: true,
        }
    }
}

/// Rewrites a count-style multi-patient question into one asking for the
/// patients themselves.
pub fn reformulate_query(question: &str) -> Reformulated {
    RuleTable::builtin().apply(question)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_question_rewrite() {
        let r = reformulate_query("Count the female patients that were prescribed heparin.");
        assert_eq!(r.text, "Which female patients were prescribed heparin?");
        assert!(!r.warning);
    }

    #[test]
    fn identity_for_targeting_questions() {
        let r = reformulate_query("Which patients were prescribed aspirin?");
        assert_eq!(r.text, "Which patients were prescribed aspirin?");
        assert_eq!(r.rule.as_deref(), Some("already-targeting"));
    }

    #[test]
    fn how_many_rewrite() {
        assert_eq!(
            reformulate_query("How many patients were diagnosed with sepsis?").text,
            "Which patients were diagnosed with sepsis?"
        );
        assert_eq!(
            reformulate_query(
                "How many Medicare insurance patients stayed in the hospital for more than 3 days?"
            )
            .text,
            "Which Medicare insurance patients stayed in the hospital for more than 3 days?"
        );
        assert_eq!(
            reformulate_query("What is the number of patients who underwent Hemodialysis?").text,
            "Which patients underwent Hemodialysis?"
        );
    }

    #[test]
    fn unmatched_is_flagged() {
        let r = reformulate_query("Tell me something.");
        assert_eq!(r.text, "Tell me something.");
        assert!(r.warning);
    }
}
