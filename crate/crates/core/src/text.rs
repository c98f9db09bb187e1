//! Canonical word-level tokenization shared by every module.

/// Lowercases and splits on whitespace; punctuation characters become
/// standalone tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else if is_punct_char(ch) {
            flush(&mut current, &mut tokens);
            tokens.push(ch.to_string());
        } else {
            current.extend(ch.to_lowercase());
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        tokens.push(std::mem::take(current));
    }
}

fn is_punct_char(ch: char) -> bool {
    // hyphens and apostrophes stay inside words
    (ch.is_ascii_punctuation() && ch != '-' && ch != '\'')
        || matches!(ch, '\u{2013}' | '\u{2014}' | '\u{201c}' | '\u{201d}')
}

/// True when every character of the token is punctuation.
pub fn is_punctuation(token: &str) -> bool {
    !token.is_empty()
        && token
            .chars()
            .all(|c| c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace()))
}

/// Tokenizes a table cell. Decimal numbers stay a single token.
pub fn tokenize_cell(cell: &str) -> Vec<String> {
    let trimmed = cell.trim();
    if !trimmed.is_empty() && trimmed.parse::<f64>().is_ok() {
        return vec![trimmed.to_lowercase()];
    }
    tokenize(cell)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(
            tokenize("The file format, Mobipocket."),
            vec!["the", "file", "format", ",", "mobipocket", "."]
        );
    }

    #[test]
    fn punctuation_predicate() {
        assert!(is_punctuation("."));
        assert!(is_punctuation(",;"));
        assert!(!is_punctuation("team"));
        assert!(!is_punctuation("3"));
        assert!(!is_punctuation(""));
    }

    #[test]
    fn decimal_cells_stay_whole() {
        assert_eq!(tokenize_cell("3.25"), vec!["3.25"]);
        assert_eq!(tokenize_cell("New York"), vec!["new", "york"]);
    }
}
