//! Comment-aware lexical scanning shared by the sketch, checker and validator.
//!
//! Recognises Lean-style `--` line comments, nestable `/- ... -/` block
//! comments and double-quoted string literals. Everything else is code.

use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanKind {
    Code,
    LineComment,
    BlockComment,
    StringLiteral,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Span {
    pub kind: SpanKind,
    pub range: Range<usize>,
}

/// Characters that may continue an identifier.
pub fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\''
}

/// Splits `text` into contiguous spans covering every byte exactly once.
pub fn classify(text: &str) -> Vec<Span> {
    let bytes = text.as_bytes();
    let mut spans: Vec<Span> = Vec::new();
    let mut push = |kind: SpanKind, range: Range<usize>| {
        if range.is_empty() {
            return;
        }
        match spans.last_mut() {
            Some(last) if last.kind == kind && last.range.end == range.start => last.range.end = range.end,
            _ => spans.push(Span { kind, range }),
        }
    };

    let mut i = 0;
    let mut code_start = 0;
    while i < bytes.len() {
        let rest = &bytes[i..];
        if rest.starts_with(b"--") {
            push(SpanKind::Code, code_start..i);
            let end = memchr_newline(bytes, i);
            push(SpanKind::LineComment, i..end);
            i = end;
            code_start = i;
        } else if rest.starts_with(b"/-") {
            push(SpanKind::Code, code_start..i);
            let end = block_comment_end(bytes, i);
            push(SpanKind::BlockComment, i..end);
            i = end;
            code_start = i;
        } else if rest[0] == b'"' {
            push(SpanKind::Code, code_start..i);
            let end = string_end(bytes, i);
            push(SpanKind::StringLiteral, i..end);
            i = end;
            code_start = i;
        } else {
            i += 1;
        }
    }
    push(SpanKind::Code, code_start..bytes.len());
    spans
}

fn memchr_newline(bytes: &[u8], from: usize) -> usize {
    bytes[from..]
        .iter()
        .position(|&b| b == b'\n')
        .map_or(bytes.len(), |p| from + p)
}

fn block_comment_end(bytes: &[u8], start: usize) -> usize {
    let mut depth = 0usize;
    let mut i = start;
    while i < bytes.len() {
        if bytes[i..].starts_with(b"/-") {
            depth += 1;
            i += 2;
        } else if bytes[i..].starts_with(b"-/") {
            depth -= 1;
            i += 2;
            if depth == 0 {
                return i;
            }
        } else {
            i += 1;
        }
    }
    bytes.len()
}

fn string_end(bytes: &[u8], start: usize) -> usize {
    let mut i = start + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'"' => return i + 1,
            _ => i += 1,
        }
    }
    bytes.len()
}

/// Byte ranges of code (non-comment, non-string) text.
pub fn code_ranges(text: &str) -> Vec<Range<usize>> {
    classify(text)
        .into_iter()
        .filter(|s| s.kind == SpanKind::Code)
        .map(|s| s.range)
        .collect()
}

/// Byte offsets of `token` occurrences that sit in code and are not part of a
/// longer identifier.
pub fn find_code_tokens(text: &str, token: &str) -> Vec<usize> {
    if token.is_empty() {
        return Vec::new();
    }
    let mut hits = Vec::new();
    for range in code_ranges(text) {
        let slice = &text[range.clone()];
        for (rel, _) in slice.match_indices(token) {
            let at = range.start + rel;
            if is_standalone(text, at, token.len()) {
                hits.push(at);
            }
        }
    }
    hits
}

/// True when the text at `at..at+len` is not glued to identifier characters.
pub fn is_standalone(text: &str, at: usize, len: usize) -> bool {
    let before = text[..at].chars().next_back();
    let after = text[at + len..].chars().next();
    !before.is_some_and(is_ident_char) && !after.is_some_and(is_ident_char)
}

/// Text with every comment replaced by spaces (newlines kept), so byte offsets
/// and line/column positions stay valid.
pub fn blank_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for span in classify(text) {
        let slice = &text[span.range];
        match span.kind {
            SpanKind::LineComment | SpanKind::BlockComment => {
                for c in slice.chars() {
                    if c == '\n' {
                        out.push('\n');
                    } else {
                        for _ in 0..c.len_utf8() {
                            out.push(' ');
                        }
                    }
                }
            }
            _ => out.push_str(slice),
        }
    }
    out
}

/// 1-based (line, column) of a byte offset. Columns count characters.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let line_start = before.rfind('\n').map_or(0, |p| p + 1);
    let col = text[line_start..offset].chars().count() + 1;
    (line, col)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_cover_input() {
        let text = "a -- c\n/- x /- y -/ z -/ \"s--\" b";
        let spans = classify(text);
        let mut pos = 0;
        for s in &spans {
            assert_eq!(s.range.start, pos);
            pos = s.range.end;
        }
        assert_eq!(pos, text.len());
        let kinds: Vec<_> = spans.iter().map(|s| s.kind).collect();
        assert_eq!(
            kinds,
            vec![
                SpanKind::Code,
                SpanKind::LineComment,
                SpanKind::Code,
                SpanKind::BlockComment,
                SpanKind::Code,
                SpanKind::StringLiteral,
                SpanKind::Code
            ]
        );
    }

    #[test]
    fn tokens_respect_identifier_boundaries() {
        assert_eq!(find_code_tokens("sorry", "sorry"), vec![0]);
        assert!(find_code_tokens("sorryAx", "sorry").is_empty());
        assert!(find_code_tokens("my_sorry", "sorry").is_empty());
        assert_eq!(find_code_tokens("(sorry)", "sorry"), vec![1]);
    }

    #[test]
    fn tokens_in_comments_and_strings_are_ignored() {
        assert!(find_code_tokens("-- sorry", "sorry").is_empty());
        assert!(find_code_tokens("/- sorry -/", "sorry").is_empty());
        assert!(find_code_tokens("\"sorry\"", "sorry").is_empty());
        // a string cannot hide the rest of a line from the scan
        assert_eq!(find_code_tokens("\"--\" sorryAx", "sorryAx"), vec![5]);
    }

    #[test]
    fn blanking_preserves_offsets() {
        let text = "x -- é\ny";
        let blanked = blank_comments(text);
        assert_eq!(blanked.len(), text.len());
        assert_eq!(line_col(&blanked, blanked.find('y').unwrap()), (2, 1));
    }
}
