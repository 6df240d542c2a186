//! Lowercasing word/punctuation tokenizer with character offsets.

/// A token with the Unicode-scalar span it came from in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

const CLITICS: &[&str] = &["'m", "'s", "'re", "'ve", "'ll", "'d"];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

/// Split a run of word characters into word and clitic pieces.
fn split_word(chars: &[char], start: usize, out: &mut Vec<Token>) {
    let lower: String = chars.iter().flat_map(|c| c.to_lowercase()).collect();
    let push = |out: &mut Vec<Token>, a: usize, b: usize| {
        let text: String = chars[a..b].iter().flat_map(|c| c.to_lowercase()).collect();
        if !text.is_empty() {
            out.push(Token { text, start: start + a, end: start + b });
        }
    };
    // Leading and trailing apostrophes are punctuation.
    let mut lo = 0;
    let mut hi = chars.len();
    let mut trailing = Vec::new();
    while lo < hi && chars[lo] == '\'' {
        push(out, lo, lo + 1);
        lo += 1;
    }
    while hi > lo && chars[hi - 1] == '\'' {
        trailing.push(hi - 1);
        hi -= 1;
    }
    if lo < hi {
        let body: Vec<char> = lower.chars().skip(lo).take(hi - lo).collect();
        let body_str: String = body.iter().collect();
        let split_at = if body.len() > 3 && body_str.ends_with("n't") {
            Some(hi - 3)
        } else {
            CLITICS
                .iter()
                .find(|c| body.len() > c.chars().count() && body_str.ends_with(*c))
                .map(|c| hi - c.chars().count())
        };
        match split_at {
            Some(k) => {
                push(out, lo, k);
                push(out, k, hi);
            }
            None => push(out, lo, hi),
        }
    }
    for t in trailing.into_iter().rev() {
        push(out, t, t + 1);
    }
}

pub fn tokenize_with_offsets(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if is_word_char(c) {
            let start = i;
            while i < chars.len() && is_word_char(chars[i]) {
                i += 1;
            }
            split_word(&chars[start..i], start, &mut out);
        } else {
            out.push(Token {
                text: c.to_lowercase().collect(),
                start: i,
                end: i + 1,
            });
            i += 1;
        }
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text).into_iter().map(|t| t.text).collect()
}

fn attaches_left(tok: &str) -> bool {
    tok == "n't"
        || CLITICS.contains(&tok)
        || matches!(tok, "." | "," | "!" | "?" | ";" | ":" | ")" | "%")
}

/// Join tokens back into readable text.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        let t = t.as_ref();
        if i > 0 && !attaches_left(t) && !out.ends_with('(') {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(tokenize("We broke up."), ["we", "broke", "up", "."]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn clitic_rule_table() {
        assert_eq!(tokenize("I'm upset"), ["i", "'m", "upset"]);
        assert_eq!(tokenize("don't"), ["do", "n't"]);
        assert_eq!(tokenize("what's up?"), ["what", "'s", "up", "?"]);
        assert_eq!(tokenize("they're"), ["they", "'re"]);
        assert_eq!(tokenize("'quoted'"), ["'", "quoted", "'"]);
        assert_eq!(tokenize("can't"), ["ca", "n't"]);
    }

    #[test]
    fn offsets_point_into_source() {
        let text = "Héllo, I'm fine";
        let chars: Vec<char> = text.chars().collect();
        for t in tokenize_with_offsets(text) {
            let src: String = chars[t.start..t.end].iter().flat_map(|c| c.to_lowercase()).collect();
            assert_eq!(src, t.text);
        }
    }

    #[test]
    fn detokenize_preserves_order() {
        let toks = tokenize("I'm so sad, we broke up today.");
        assert_eq!(detokenize(&toks), "i'm so sad, we broke up today.");
        assert_eq!(tokenize(&detokenize(&toks)), toks);
    }
}
