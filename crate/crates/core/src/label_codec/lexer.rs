use crate::domain::{EntityTag, TagAlphabet};

/// Upper bound on the body of anything treated as a token.
const MAX_TOKEN_BODY: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(super) enum Item<'a> {
    Tag { tag: EntityTag, pos: usize },
    Unknown { token: &'a str, pos: usize },
    Text { text: &'a str, pos: usize },
    Newline { pos: usize },
}

/// Splits a label into tags, unknown `<...>` tokens, newlines and text runs.
/// Positions are 1-based character offsets.
pub(super) fn lex<'a>(label: &'a str, alphabet: &TagAlphabet) -> Vec<Item<'a>> {
    let chars: Vec<(usize, char)> = label.char_indices().collect();
    let mut items = Vec::new();
    let mut text_start: Option<usize> = None;
    let mut i = 0;

    let flush_text = |items: &mut Vec<Item<'a>>, start: &mut Option<usize>, end_char: usize| {
        if let Some(s) = start.take() {
            let from = chars[s].0;
            let to = chars.get(end_char).map_or(label.len(), |c| c.0);
            items.push(Item::Text {
                text: &label[from..to],
                pos: s + 1,
            });
        }
    };

    while i < chars.len() {
        let c = chars[i].1;
        if c == '\n' {
            flush_text(&mut items, &mut text_start, i);
            items.push(Item::Newline { pos: i + 1 });
            i += 1;
            continue;
        }
        if c == '<' {
            if let Some(end) = token_end(&chars, i) {
                flush_text(&mut items, &mut text_start, i);
                let from = chars[i].0;
                let to = chars.get(end + 1).map_or(label.len(), |c| c.0);
                let token = &label[from..to];
                items.push(match alphabet.tag_from_token(token) {
                    Ok(tag) => Item::Tag { tag, pos: i + 1 },
                    Err(_) => Item::Unknown { token, pos: i + 1 },
                });
                i = end + 1;
                continue;
            }
        }
        if text_start.is_none() {
            text_start = Some(i);
        }
        i += 1;
    }
    flush_text(&mut items, &mut text_start, chars.len());
    items
}

/// Index of the `>` closing a token that opens at `start`, if any.
fn token_end(chars: &[(usize, char)], start: usize) -> Option<usize> {
    for (k, &(_, c)) in chars
        .iter()
        .enumerate()
        .skip(start + 1)
        .take(MAX_TOKEN_BODY + 1)
    {
        match c {
            '>' if k > start + 1 => return Some(k),
            '>' | '<' => return None,
            c if c.is_whitespace() || c.is_control() => return None,
            _ => {}
        }
    }
    None
}
