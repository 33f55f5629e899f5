use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One annotated sentence. Column format on disk:
/// `surface<TAB>pos<TAB>label`, one token per line, blank line between
/// sentences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub pos_tags: Vec<String>,
    pub error_labels: Vec<u8>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, pos_tags: Vec<String>, error_labels: Vec<u8>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Data("empty sentence".into()));
        }
        if tokens.len() != pos_tags.len() || tokens.len() != error_labels.len() {
            return Err(Error::Data(format!(
                "column lengths differ: {} tokens, {} tags, {} labels",
                tokens.len(),
                pos_tags.len(),
                error_labels.len()
            )));
        }
        if let Some(bad) = error_labels.iter().find(|&&l| l > 1) {
            return Err(Error::Data(format!("error label {bad} is not 0/1")));
        }
        Ok(Sentence {
            tokens,
            pos_tags,
            error_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// 1-based index of the first token labeled as an error.
    pub fn gold_position(&self) -> Option<usize> {
        self.error_labels.iter().position(|&l| l == 1).map(|i| i + 1)
    }
}

pub fn parse_corpus(text: &str) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    let mut cur: (Vec<String>, Vec<String>, Vec<u8>) = Default::default();
    let mut start_line = 0;

    let flush = |cur: &mut (Vec<String>, Vec<String>, Vec<u8>), out: &mut Vec<Sentence>, line: usize| {
        if cur.0.is_empty() {
            return Ok(());
        }
        let (t, p, l) = std::mem::take(cur);
        let s = Sentence::new(t, p, l).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        out.push(s);
        Ok::<(), Error>(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut cur, &mut out, start_line)?;
            continue;
        }
        if cur.0.is_empty() {
            start_line = line_no;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        if cols[0].is_empty() || cols[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty token or tag".into(),
            });
        }
        let label = match cols[2].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown label symbol {other:?}"),
                })
            }
        };
        cur.0.push(cols[0].to_string());
        cur.1.push(cols[1].to_string());
        cur.2.push(label);
    }
    flush(&mut cur, &mut out, start_line)?;
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

pub fn format_corpus(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for ((t, p), l) in s.tokens.iter().zip(&s.pos_tags).zip(&s.error_labels) {
            let _ = writeln!(out, "{t}\t{p}\t{l}");
        }
    }
    out
}

pub fn write_corpus(path: impl AsRef<Path>, sentences: &[Sentence]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_corpus(sentences)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_single_sentence() {
        let s = parse_corpus("我\tr\t0\n出出\tv\t1\n在\tp\t0\n").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].tokens, vec!["我", "出出", "在"]);
        assert_eq!(s[0].gold_position(), Some(2));
    }

    #[test]
    fn blank_lines_separate_and_repeat_harmlessly() {
        let s = parse_corpus("a\tn\t0\n\n\n\nb\tv\t1\r\nc\tn\t0\n\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].tokens, vec!["b", "c"]);
    }

    #[test]
    fn bad_label_names_line() {
        let err = parse_corpus("a\tn\t0\nb\tv\t2\n").unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("label"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn ragged_columns_rejected() {
        assert!(matches!(
            parse_corpus("a\tn\t0\nb\t1\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_corpus("a\tn\t0\textra\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_token_rejected() {
        assert!(matches!(parse_corpus("\tn\t0\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn constructor_invariants() {
        assert!(Sentence::new(vec![], vec![], vec![]).is_err());
        assert!(Sentence::new(vec!["a".into()], vec![], vec![0]).is_err());
        assert!(Sentence::new(vec!["a".into()], vec!["n".into()], vec![3]).is_err());
    }

    fn sentence_strategy() -> impl Strategy<Value = Sentence> {
        prop::collection::vec(("[a-z\u{4e00}-\u{4e10}]{1,4}", "[a-z]{1,2}", 0u8..2), 1..8).prop_map(|toks| {
            let (t, (p, l)): (Vec<String>, (Vec<String>, Vec<u8>)) =
                toks.into_iter().map(|(a, b, c)| (a, (b, c))).unzip();
            Sentence::new(t, p, l).unwrap()
        })
    }

    proptest! {
        #[test]
        fn write_then_parse_is_identity(sents in prop::collection::vec(sentence_strategy(), 0..6)) {
            let text = format_corpus(&sents);
            prop_assert_eq!(parse_corpus(&text).unwrap(), sents);
        }
    }
}
