//! Tag and number extraction shared by scoring and rewards.
//!
//! Numbers may carry a sign, a leading currency symbol, thousands
//! separators, a decimal part, an exponent, a trailing `%` (stripped, never
//! divided), or a word multiplier (thousand / million / billion). Digits glued
//! to letters (`Q3`, `CO2`, `5th`) are not numbers.

use std::sync::LazyLock;

use regex::Regex;

static THINK_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<think>(.*?)</think>").unwrap());
static ANSWER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<answer>(.*?)</answer>").unwrap());

static NUMBER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?x)
        (?P<sign>[-+\x{2212}])?
        (?:(?P<cur>[$€£¥])\s*)?
        (?P<sign2>[-+\x{2212}])?
        (?P<num>(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?|\.\d+)
        (?:[eE](?P<exp>[-+]?\d{1,3}))?
        (?P<suffix>\s*%|\s+(?i:percent)\b|\s*(?i:thousand|million|billion)\b)?
        ",
    )
    .unwrap()
});

/// Contents of the first `<think>` block.
pub fn think_block(text: &str) -> Option<&str> {
    THINK_RE.captures(text).map(|c| c.get(1).unwrap().as_str())
}

/// Contents of the last `<answer>` block.
pub fn answer_block(text: &str) -> Option<&str> {
    ANSWER_RE.captures_iter(text).last().map(|c| c.get(1).unwrap().as_str())
}

/// `text` with every think block removed.
pub fn strip_think(text: &str) -> String {
    THINK_RE.replace_all(text, " ").into_owned()
}

/// All numbers in `text`, in order of appearance.
pub fn numbers(text: &str) -> Vec<f64> {
    let mut out = Vec::new();
    for caps in NUMBER_RE.captures_iter(text) {
        let whole = caps.get(0).unwrap();
        let num = caps.name("num").unwrap();
        let num_start = caps
            .name("cur")
            .or_else(|| caps.name("sign2"))
            .map_or(num.start(), |m| m.start().min(num.start()));

        let before_num = text[..num_start].chars().next_back();
        let glued_front = before_num.is_some_and(|c| c.is_alphabetic() || c == '_');
        let after = text[whole.end()..].chars().next();
        let glued_back = caps.name("suffix").is_none() && after.is_some_and(|c| c.is_alphanumeric() || c == '_');
        if glued_front || glued_back {
            continue;
        }

        // a sign directly after a word or digit is a hyphen ("2019-2020")
        let mut negative = false;
        if let Some(s) = caps.name("sign") {
            let prev = text[..s.start()].chars().next_back();
            let is_hyphen = prev.is_some_and(|c| c.is_alphanumeric());
            if !is_hyphen && s.as_str() != "+" {
                negative = true;
            }
        }
        if let Some(s) = caps.name("sign2") {
            if s.as_str() != "+" {
                negative = !negative;
            }
        }

        let mut exp: i32 = caps.name("exp").and_then(|e| e.as_str().parse().ok()).unwrap_or(0);
        if let Some(suffix) = caps.name("suffix") {
            match suffix.as_str().trim().to_ascii_lowercase().as_str() {
                "thousand" => exp += 3,
                "million" => exp += 6,
                "billion" => exp += 9,
                _ => {}
            }
        }
        let digits: String = num.as_str().chars().filter(|&c| c != ',').collect();
        let literal = format!("{}{}e{}", if negative { "-" } else { "" }, digits, exp);
        if let Ok(v) = literal.parse::<f64>() {
            if v.is_finite() {
                out.push(if v == 0.0 { 0.0 } else { v });
            }
        }
    }
    out
}

/// Last complete number in `text`.
pub fn last_number(text: &str) -> Option<f64> {
    numbers(text).pop()
}

/// Numeric value of the `<answer>` block, if there is one and it holds a number.
pub fn answer_value(text: &str) -> Option<f64> {
    answer_block(text).and_then(last_number)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_and_signed() {
        assert_eq!(numbers("75"), vec![75.0]);
        assert_eq!(numbers("-3.5 and +2"), vec![-3.5, 2.0]);
        assert_eq!(numbers("\u{2212}12"), vec![-12.0]);
        assert_eq!(numbers(".5"), vec![0.5]);
    }

    #[test]
    fn separators_currency_percent() {
        assert_eq!(last_number("about $1,234.50"), Some(1234.5));
        assert_eq!(last_number("-$5"), Some(-5.0));
        assert_eq!(last_number("$-5"), Some(-5.0));
        assert_eq!(last_number("75%"), Some(75.0));
        assert_eq!(last_number("75 percent"), Some(75.0));
        assert_eq!(last_number("€12"), Some(12.0));
    }

    #[test]
    fn word_multipliers() {
        assert_eq!(last_number("The value is about 1.2 million"), Some(1_200_000.0));
        assert_eq!(last_number("3 thousand"), Some(3000.0));
        assert_eq!(last_number("$2.5 billion"), Some(2.5e9));
        assert_eq!(last_number("1e3"), Some(1000.0));
    }

    #[test]
    fn glued_digits_are_ignored() {
        assert_eq!(numbers("Q3 value 74"), vec![74.0]);
        assert_eq!(numbers("CO2 at 5th place"), Vec::<f64>::new());
    }

    #[test]
    fn hyphenated_ranges_are_not_negative() {
        assert_eq!(numbers("2019-2020"), vec![2019.0, 2020.0]);
        assert_eq!(numbers("between 70 - 75"), vec![70.0, 75.0]);
    }

    #[test]
    fn last_number_wins() {
        assert_eq!(answer_value("<answer>roughly 70, maybe 72</answer>"), Some(72.0));
        assert_eq!(answer_value("<answer>unclear</answer>"), None);
        assert_eq!(answer_value("no tags 5"), None);
    }

    #[test]
    fn tag_blocks() {
        let t = "<think>axis max 100</think>\n<answer>75</answer>";
        assert_eq!(think_block(t), Some("axis max 100"));
        assert_eq!(answer_block(t), Some("75"));
        assert_eq!(strip_think(t).trim(), "<answer>75</answer>");
        assert_eq!(answer_block("<ANSWER>1</ANSWER><answer>2</answer>"), Some("2"));
    }
}
