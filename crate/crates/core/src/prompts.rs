//! Versioned prompt templates. Placeholders are `{name}` and are filled by
//! [`fill`]; unknown placeholders are left as they are.

use crate::response_eval::PromptMode;

pub const VERSION: &str = "v1";

pub const DIRECT: &str = include_str!("../prompts/v1/direct.txt");
pub const OPTIONAL_COT: &str = include_str!("../prompts/v1/optional_cot.txt");
pub const FORCED_COT: &str = include_str!("../prompts/v1/forced_cot.txt");
pub const DISTILL: &str = include_str!("../prompts/v1/distill.txt");
pub const SELF_INSTRUCT: &str = include_str!("../prompts/v1/self_instruct.txt");
pub const EVOL_INSTRUCT: &str = include_str!("../prompts/v1/evol_instruct.txt");
pub const REPAIR: &str = include_str!("../prompts/v1/repair.txt");

/// System prompt for an inference round.
pub fn system_for(mode: PromptMode) -> &'static str {
    match mode {
        PromptMode::Direct => DIRECT,
        PromptMode::OptionalCot => OPTIONAL_COT,
        PromptMode::ForcedCot => FORCED_COT,
    }
}

pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_carry_their_placeholders() {
        assert!(DISTILL.contains("{question}") && DISTILL.contains("{answer}"));
        assert!(SELF_INSTRUCT.contains("{examples}"));
        assert!(EVOL_INSTRUCT.contains("{spec}"));
        assert!(REPAIR.contains("{report}") && REPAIR.contains("{spec}"));
        assert!(FORCED_COT.contains("<think>") && FORCED_COT.contains("<answer>"));
    }

    #[test]
    fn fill_replaces_every_occurrence() {
        assert_eq!(fill("{a}+{a}={b}", &[("a", "1"), ("b", "2")]), "1+1=2");
        assert_eq!(fill("{x}", &[]), "{x}");
    }
}
