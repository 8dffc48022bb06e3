/// One surface unit of the token stream. Offsets count Unicode scalar values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub lower: String,
    pub chars: Vec<char>,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn new(surface: &str, start: usize) -> Self {
        let chars: Vec<char> = surface.chars().collect();
        Token {
            surface: surface.to_string(),
            lower: surface.to_lowercase(),
            end: start + chars.len(),
            chars,
            start,
        }
    }
}

/// Splits text into maximal alphanumeric runs and single punctuation
/// characters. Whitespace separates tokens and never becomes one.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut run = String::new();
    let mut run_start = 0;
    for (pos, ch) in text.chars().enumerate() {
        if ch.is_alphanumeric() {
            if run.is_empty() {
                run_start = pos;
            }
            run.push(ch);
            continue;
        }
        if !run.is_empty() {
            tokens.push(Token::new(&run, run_start));
            run.clear();
        }
        if !ch.is_whitespace() {
            let mut buf = [0u8; 4];
            tokens.push(Token::new(ch.encode_utf8(&mut buf), pos));
        }
    }
    if !run.is_empty() {
        tokens.push(Token::new(&run, run_start));
    }
    tokens
}

/// A typed mention over an inclusive token range.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntitySpan {
    pub first_token: usize,
    pub last_token: usize,
    pub label: String,
    pub char_start: usize,
    pub char_end: usize,
}

impl EntitySpan {
    /// Span over `first..=last` with character offsets taken from `tokens`.
    pub fn over(tokens: &[Token], first: usize, last: usize, label: impl Into<String>) -> Self {
        EntitySpan {
            first_token: first,
            last_token: last,
            label: label.into(),
            char_start: tokens[first].start,
            char_end: tokens[last].end,
        }
    }

    /// Token-level span without character offsets.
    pub fn tokens_only(first: usize, last: usize, label: impl Into<String>) -> Self {
        EntitySpan {
            first_token: first,
            last_token: last,
            label: label.into(),
            char_start: 0,
            char_end: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.last_token + 1 - self.first_token
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn key(&self) -> (usize, usize, &str) {
        (self.first_token, self.last_token, self.label.as_str())
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.first_token <= other.last_token && other.first_token <= self.last_token
    }
}

/// A document as a boundary-free token stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    pub gold_spans: Vec<EntitySpan>,
    /// Offsets of `'\n'` characters. Kept for output formatting only.
    pub line_breaks: Vec<usize>,
}

impl Document {
    pub fn from_text(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        let line_breaks = text
            .chars()
            .enumerate()
            .filter(|(_, c)| *c == '\n')
            .map(|(i, _)| i)
            .collect();
        Document {
            id: id.into(),
            text,
            tokens,
            gold_spans: Vec::new(),
            line_breaks,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Fill character offsets of token-level spans from this document's tokens.
    pub fn attach_offsets(&self, spans: &mut [EntitySpan]) {
        for s in spans {
            s.char_start = self.tokens[s.first_token].start;
            s.char_end = self.tokens[s.last_token].end;
        }
    }

    /// Text between character offsets `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> String {
        self.text
            .chars()
            .skip(start)
            .take(end.saturating_sub(start))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surfaces(tokens: &[Token]) -> Vec<&str> {
        tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    #[test]
    fn tokenizes_title_and_name() {
        let toks = tokenize("Dr. Smith");
        assert_eq!(surfaces(&toks), ["Dr", ".", "Smith"]);
        let offsets: Vec<_> = toks.iter().map(|t| (t.start, t.end)).collect();
        assert_eq!(offsets, [(0, 2), (2, 3), (4, 9)]);
    }

    #[test]
    fn tokenizes_tabulated_numbers() {
        assert_eq!(surfaces(&tokenize("123/456")), ["123", "/", "456"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize(" \n\t\n").is_empty());
    }

    #[test]
    fn lowercase_and_chars() {
        let t = &tokenize("  Enoxaparin")[0];
        assert_eq!(t.lower, "enoxaparin");
        assert_eq!(t.chars.len(), 10);
        assert_eq!((t.start, t.end), (2, 12));
    }

    #[test]
    fn non_ascii_offsets_count_chars() {
        let doc = Document::from_text("d", "Özlem saw\nJosé");
        let s = surfaces(&doc.tokens);
        assert_eq!(s, ["Özlem", "saw", "José"]);
        for t in &doc.tokens {
            assert_eq!(doc.slice(t.start, t.end), t.surface);
        }
        assert_eq!(doc.line_breaks, vec![9]);
    }
}
