//! The one tokenizer every metric uses: lowercase, maximal runs of
//! alphanumeric characters (Unicode `char::is_alphanumeric`), everything
//! else is a separator.

/// A token plus the index of the sentence it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub sentence: usize,
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_sentences(text).into_iter().map(|t| t.text).collect()
}

/// Tokenize and track sentence boundaries. A separator run ends a sentence
/// when it contains `!`, `?`, `;`, a newline, or a `.` that is not directly
/// followed by an alphanumeric character (so `3.5` stays one sentence).
pub fn tokenize_sentences(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut sentence = 0usize;
    let mut current = String::new();
    let mut pending_break = false;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c.is_alphanumeric() {
            if pending_break {
                if !out.is_empty() {
                    sentence += 1;
                }
                pending_break = false;
            }
            current.extend(c.to_lowercase());
            continue;
        }
        if !current.is_empty() {
            out.push(Token {
                text: std::mem::take(&mut current),
                sentence,
            });
        }
        let ends = match c {
            '!' | '?' | ';' | '\n' => true,
            '.' => !chars.peek().is_some_and(|n| n.is_alphanumeric()),
            _ => false,
        };
        pending_break |= ends;
    }
    if !current.is_empty() {
        out.push(Token {
            text: current,
            sentence,
        });
    }
    out
}
