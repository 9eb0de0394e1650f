use super::{Arc, Token};
use crate::{Error, Result};

/// Word lines of one CoNLL-U sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedSentence {
    pub tokens: Vec<Token>,
    pub arcs: Vec<Arc>,
}

const FORM: usize = 1;
const HEAD: usize = 6;
const DEPREL: usize = 7;

/// Reads FORM, HEAD and DEPREL of every word line.
///
/// Comment lines, multiword-token ranges (`3-4`) and empty nodes (`5.1`) are
/// skipped. Blank lines separate sentences.
pub fn parse_conllu(text: &str) -> Result<Vec<ParsedSentence>> {
    let mut sentences = Vec::new();
    let mut current = ParsedSentence { tokens: Vec::new(), arcs: Vec::new() };
    // line number of each word, for head range errors
    let mut word_lines: Vec<usize> = Vec::new();

    let finish = |current: &mut ParsedSentence, word_lines: &mut Vec<usize>, out: &mut Vec<ParsedSentence>| {
        let n = current.tokens.len();
        for (arc, &line) in current.arcs.iter().zip(word_lines.iter()) {
            if arc.head > n {
                return Err(Error::Parse { line, message: format!("head {} outside sentence of {n} words", arc.head) });
            }
        }
        if n > 0 {
            out.push(std::mem::replace(current, ParsedSentence { tokens: Vec::new(), arcs: Vec::new() }));
        }
        word_lines.clear();
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut current, &mut word_lines, &mut sentences)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize =
            id.parse().map_err(|_| Error::Parse { line: line_no, message: format!("non-integer token id {id:?}") })?;
        if id != current.tokens.len() + 1 {
            return Err(Error::Parse { line: line_no, message: format!("token id {id} out of sequence") });
        }
        let head: usize = cols[HEAD]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, message: format!("non-integer head {:?}", cols[HEAD]) })?;
        if head == id {
            return Err(Error::Parse { line: line_no, message: "token is its own head".into() });
        }
        current.tokens.push(Token::new(cols[FORM]));
        current.arcs.push(Arc::new(head, id, cols[DEPREL]));
        word_lines.push(line_no);
    }
    finish(&mut current, &mut word_lines, &mut sentences)?;
    Ok(sentences)
}

/// Writes sentences back as CoNLL-U; columns other than ID, FORM, HEAD and
/// DEPREL are `_`.
pub fn write_conllu(sentences: &[ParsedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        let mut heads = vec![(0usize, "_"); s.tokens.len()];
        for arc in &s.arcs {
            if let Some(slot) = heads.get_mut(arc.dependent.wrapping_sub(1)) {
                *slot = (arc.head, arc.relation.as_str());
            }
        }
        for (i, (tok, (head, rel))) in s.tokens.iter().zip(heads).enumerate() {
            out.push_str(&format!("{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_\n", i + 1, tok.surface, head, rel));
        }
        out.push('\n');
    }
    out
}
