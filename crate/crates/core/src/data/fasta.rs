use super::ProteinRecord;
use crate::error::{Error, Result};

const LINE_WIDTH: usize = 60;

/// Parses FASTA text. The record id is the first whitespace-delimited token
/// of the header; sequence lines are concatenated and uppercased.
pub fn parse_fasta(text: &str) -> Result<Vec<ProteinRecord>> {
    let mut records: Vec<(ProteinRecord, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            if let Some((prev, at)) = records.last() {
                if prev.sequence.is_empty() {
                    return Err(Error::Parse {
                        line: *at,
                        msg: format!("record {:?} has an empty sequence", prev.id),
                    });
                }
            }
            let id = header.split_whitespace().next().ok_or(Error::Parse {
                line: line_no,
                msg: "header without id".into(),
            })?;
            records.push((ProteinRecord::new(id, String::new()), line_no));
        } else {
            let (rec, _) = records.last_mut().ok_or(Error::Parse {
                line: line_no,
                msg: "sequence data before the first header".into(),
            })?;
            rec.sequence.extend(line.chars().filter(|c| !c.is_whitespace()).map(|c| c.to_ascii_uppercase()));
        }
    }
    if let Some((prev, at)) = records.last() {
        if prev.sequence.is_empty() {
            return Err(Error::Parse {
                line: *at,
                msg: format!("record {:?} has an empty sequence", prev.id),
            });
        }
    }
    Ok(records.into_iter().map(|(r, _)| r).collect())
}

/// Writes records as FASTA with 60-column sequence lines.
pub fn write_fasta(records: &[ProteinRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push('>');
        out.push_str(&r.id);
        out.push('\n');
        for chunk in r.sequence.as_bytes().chunks(LINE_WIDTH) {
            out.push_str(std::str::from_utf8(chunk).expect("ascii sequence"));
            out.push('\n');
        }
    }
    out
}
