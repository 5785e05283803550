use std::fmt::Write;

use super::{Tag, TaggedSentence};
use crate::error::{Error, Result};

const DOCSTART: &str = "-DOCSTART-";

/// Which whitespace-separated column holds the tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TagColumn {
    #[default]
    Last,
    Index(usize),
}

impl TagColumn {
    fn pick<'a>(&self, cols: &[&'a str]) -> Option<&'a str> {
        match *self {
            TagColumn::Last => cols.last().copied(),
            TagColumn::Index(i) => cols.get(i).copied(),
        }
    }

    fn min_columns(&self) -> usize {
        match *self {
            TagColumn::Last => 2,
            TagColumn::Index(i) => (i + 1).max(2),
        }
    }
}

/// Parses CoNLL column text: one token per line, blank lines between
/// sentences, token in the first column. `-DOCSTART-` lines are dropped.
pub fn parse_conll(text: &str, column: TagColumn) -> Result<Vec<TaggedSentence>> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();

    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<Tag>| -> Result<()> {
        if !tokens.is_empty() {
            sentences.push(TaggedSentence::new(
                std::mem::take(tokens),
                std::mem::take(tags),
            )?);
        }
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            flush(&mut tokens, &mut tags)?;
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols[0] == DOCSTART {
            flush(&mut tokens, &mut tags)?;
            continue;
        }
        if cols.len() < column.min_columns() {
            return Err(Error::Parse {
                line: line_no,
                message: format!(
                    "expected at least {} columns, found {}",
                    column.min_columns(),
                    cols.len()
                ),
            });
        }
        let tag_str = column.pick(&cols).expect("column count checked");
        let tag = tag_str
            .parse::<Tag>()
            .map_err(|message| Error::InvalidTag {
                line: line_no,
                tag: tag_str.to_string(),
                message,
            })?;
        tokens.push(cols[0].to_string());
        tags.push(tag);
    }
    flush(&mut tokens, &mut tags)?;
    Ok(sentences)
}

/// Writes sentences as `token gold [extra...]` columns. `extra[c][s][i]` is
/// column `c` for token `i` of sentence `s`.
pub fn write_conll(sentences: &[TaggedSentence], extra: &[Vec<Vec<String>>]) -> String {
    let mut out = String::new();
    for (si, s) in sentences.iter().enumerate() {
        for (i, (tok, tag)) in s.tokens.iter().zip(&s.tags).enumerate() {
            write!(out, "{tok} {tag}").unwrap();
            for col in extra {
                write!(out, " {}", col[si][i]).unwrap();
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
