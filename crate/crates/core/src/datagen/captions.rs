use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;

struct Rules {
    links: Regex,
    html: Regex,
    brackets: Regex,
    symbols: Regex,
    spaces: Regex,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| Rules {
        links: Regex::new(
            r"(?xi)
            [a-z0-9._%+-]+@[a-z0-9-]+(?:\.[a-z0-9-]+)+    # email
            | (?:https?|ftp)://\S*                       # scheme links
            | www\.\S*
            | \b[a-z0-9-]+(?:\.[a-z0-9-]+)*\.(?:com|net|org|io|co|edu|gov|info|biz|uk|de|jpg|jpeg|png|gif|html?)\b(?:/\S*)?",
        )
        .expect("link pattern"),
        html: Regex::new(r"(?s)<!--.*?-->|</?[A-Za-z][^<>]*>|&(?:[A-Za-z]+|#[0-9]+|#x[0-9A-Fa-f]+);")
            .expect("html pattern"),
        brackets: Regex::new(r"\[[^\[\]]*\]|\{[^{}]*\}").expect("bracket pattern"),
        symbols: Regex::new(r"[-_/\\\u{2010}-\u{2015}\u{2212}]").expect("symbol pattern"),
        spaces: Regex::new(r"\s+").expect("space pattern"),
    })
}

fn is_quote(c: char) -> bool {
    matches!(
        c,
        '"' | '\''
            | '`'
            | '\u{2018}'
            | '\u{2019}'
            | '\u{201a}'
            | '\u{201b}'
            | '\u{201c}'
            | '\u{201d}'
            | '\u{201e}'
            | '\u{201f}'
            | '\u{00ab}'
            | '\u{00bb}'
            | '\u{2039}'
            | '\u{203a}'
            | '\u{00b4}'
    )
}

/// Drops every quote character except an apostrophe forming `'s` after a
/// word character.
fn strip_quotes(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    for (i, &c) in chars.iter().enumerate() {
        if !is_quote(c) {
            out.push(c);
            continue;
        }
        let apostrophe = matches!(c, '\'' | '\u{2019}');
        let after_word = i > 0 && chars[i - 1].is_alphanumeric();
        let s_next = chars.get(i + 1).is_some_and(|&n| n == 's' || n == 'S');
        let ends = chars.get(i + 2).is_none_or(|&n| !n.is_alphanumeric());
        if apostrophe && after_word && s_next && ends {
            out.push('\'');
        }
    }
    out
}

fn clean_once(s: &str) -> String {
    let r = rules();
    let s = r.links.replace_all(s, " ");
    let s = r.html.replace_all(&s, " ");
    let s = r.brackets.replace_all(&s, " ");
    let s = r.symbols.replace_all(&s, " ");
    let s = strip_quotes(&s);
    r.spaces.replace_all(&s, " ").trim().to_string()
}

/// Caption cleaner: links and emails, HTML, bracketed spans, dashes /
/// slashes / underscores, then quotes (keeping `'s`), then whitespace. The
/// rules are reapplied until nothing changes, which makes the cleaner
/// idempotent.
pub fn clean_caption(s: &str) -> String {
    let mut cur = clean_once(s);
    for _ in 0..16 {
        let next = clean_once(&cur);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

const LINKS: [&str; 4] =
    ["http://img.example.com/p/1234.jpg", "www.shapes-store.net", "shop@example.org", "https://cdn.example.io/a?b=c"];
const TAGS: [(&str, &str); 3] = [("<b>", "</b>"), ("<span class=\"t\">", "</span>"), ("<i>", "</i>")];
const BRACKETS: [&str; 4] = ["[stock photo]", "{id: 42}", "[HD]", "{sale}"];

/// Adds a couple of web-scrape artefacts to a clean caption. The cleaner
/// maps the result back to the original.
pub fn pollute<R: Rng + ?Sized>(caption: &str, rng: &mut R) -> String {
    let mut words: Vec<String> = caption.split(' ').map(str::to_string).collect();
    let kinds = [0u8, 1, 2, 3, 4];
    let mut picks: Vec<u8> = kinds.choose_multiple(rng, 2).copied().collect();
    // word-level edits first so they never touch an inserted link
    picks.sort_unstable_by(|a, b| b.cmp(a));
    for kind in picks {
        match kind {
            0 => {
                let link = LINKS.choose(rng).expect("non-empty");
                if rng.gen() {
                    words.insert(0, (*link).to_string());
                } else {
                    words.push((*link).to_string());
                }
            }
            1 => {
                let (open, close) = TAGS.choose(rng).expect("non-empty");
                words.insert(0, (*open).to_string());
                words.push((*close).to_string());
            }
            2 => words.push((*BRACKETS.choose(rng).expect("non-empty")).to_string()),
            3 => {
                let i = rng.gen_range(0..words.len());
                words[i] = format!("\"{}\"", words[i]);
            }
            _ => {
                if words.len() >= 2 {
                    let i = rng.gen_range(0..words.len() - 1);
                    let joined =
                        format!("{}{}{}", words[i], ["_", "-", "/"].choose(rng).expect("non-empty"), words[i + 1]);
                    words.splice(i..i + 2, [joined]);
                }
            }
        }
    }
    words.join(" ")
}
