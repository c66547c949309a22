use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextNormConfig {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub collapse_whitespace: bool,
}

impl Default for TextNormConfig {
    fn default() -> Self {
        TextNormConfig {
            lowercase: true,
            strip_punctuation: true,
            collapse_whitespace: true,
        }
    }
}

impl TextNormConfig {
    pub const NONE: TextNormConfig = TextNormConfig {
        lowercase: false,
        strip_punctuation: false,
        collapse_whitespace: false,
    };
}

/// Applies the configured transforms and splits on whitespace.
///
/// Punctuation is deleted, not replaced by a space, so "z.B." becomes "zb".
/// Without `collapse_whitespace` every single whitespace character is a
/// separator and runs of them yield empty tokens.
pub fn normalize_text(s: &str, cfg: &TextNormConfig) -> Vec<String> {
    let mut t: String = if cfg.lowercase { s.to_lowercase() } else { s.to_string() };
    if cfg.strip_punctuation {
        t.retain(|c| c.is_alphanumeric() || c.is_whitespace());
    }
    if cfg.collapse_whitespace {
        t.split_whitespace().map(str::to_string).collect()
    } else if t.is_empty() {
        Vec::new()
    } else {
        t.split(char::is_whitespace).map(str::to_string).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let cfg = TextNormConfig::default();
        assert_eq!(normalize_text("Der Hund!", &cfg), ["der", "hund"]);
        assert!(normalize_text("", &cfg).is_empty());
        assert_eq!(normalize_text("  Grüezi,   mitenand. ", &cfg), ["grüezi", "mitenand"]);
        assert_eq!(normalize_text("Der Hund!", &TextNormConfig::NONE), ["Der", "Hund!"]);
    }

    #[test]
    fn idempotent_on_normalized_text() {
        let cfg = TextNormConfig::default();
        let once = normalize_text("Das ist's, z.B. – Äpfel & Birnen?", &cfg).join(" ");
        let twice = normalize_text(&once, &cfg).join(" ");
        assert_eq!(once, twice);
    }
}
