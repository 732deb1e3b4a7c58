//! Tab-separated tables. UTF-8, header row required, `#` comment lines and
//! blank lines skipped. Annotation coordinates are 1-based and inclusive.

use std::collections::{BTreeMap, BTreeSet};

use super::{AnnotationType, ProteinRecord, Split};
use crate::error::{Error, Result};

pub type AnnotationTable = BTreeMap<String, BTreeMap<AnnotationType, Vec<bool>>>;

const LABELS_HEADER: [&str; 2] = ["protein_id", "class_id"];
const ANNOTATIONS_HEADER: [&str; 4] = ["protein_id", "annotation_type", "start", "end"];
const SPLITS_HEADER: [&str; 2] = ["protein_id", "split"];

/// Data rows as `(line number, fields)`, header checked and removed.
fn rows<'a>(text: &'a str, header: &[&str]) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let Some((line, first)) = lines.next() else {
        return Ok(Vec::new());
    };
    let got: Vec<&str> = first.split('\t').map(str::trim).collect();
    if got != header {
        return Err(Error::Parse {
            line,
            msg: format!("expected header {:?}, found {:?}", header.join("\t"), first),
        });
    }
    lines
        .map(|(line, l)| {
            let fields: Vec<&str> = l.split('\t').map(str::trim).collect();
            if fields.len() != header.len() {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} columns, found {}", header.len(), fields.len()),
                });
            }
            Ok((line, fields))
        })
        .collect()
}

fn known<'a>(ids: &BTreeSet<String>, id: &'a str, line: usize) -> Result<&'a str> {
    if ids.contains(id) {
        Ok(id)
    } else {
        Err(Error::Parse {
            line,
            msg: format!("unknown protein id {id:?}"),
        })
    }
}

/// `protein_id → class ids`; duplicates collapse.
pub fn parse_labels(text: &str, ids: &BTreeSet<String>) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let rows = rows(text, &LABELS_HEADER)?;
    if rows.is_empty() {
        log::warn!("label table is empty");
    }
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (line, f) in rows {
        let id = known(ids, f[0], line)?;
        if f[1].is_empty() {
            return Err(Error::Parse {
                line,
                msg: "empty class id".into(),
            });
        }
        out.entry(id.to_string()).or_default().insert(f[1].to_string());
    }
    Ok(out)
}

/// Per-protein masks from 1-based inclusive ranges; overlapping ranges union.
pub fn parse_annotations(text: &str, lengths: &BTreeMap<String, usize>) -> Result<AnnotationTable> {
    let mut out = AnnotationTable::new();
    for (line, f) in rows(text, &ANNOTATIONS_HEADER)? {
        let len = *lengths.get(f[0]).ok_or_else(|| Error::Parse {
            line,
            msg: format!("unknown protein id {:?}", f[0]),
        })?;
        let kind: AnnotationType = f[1].parse().map_err(|e: Error| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let coord = |s: &str, what: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad {what} coordinate {s:?}"),
            })
        };
        let (start, end) = (coord(f[2], "start")?, coord(f[3], "end")?);
        if start == 0 || end == 0 {
            return Err(Error::Parse {
                line,
                msg: "coordinates are 1-based".into(),
            });
        }
        if end < start {
            return Err(Error::Parse {
                line,
                msg: format!("end {end} before start {start}"),
            });
        }
        if end > len {
            return Err(Error::Parse {
                line,
                msg: format!("end {end} beyond sequence length {len}"),
            });
        }
        let mask = out
            .entry(f[0].to_string())
            .or_default()
            .entry(kind)
            .or_insert_with(|| vec![false; len]);
        mask[start - 1..end].fill(true);
    }
    Ok(out)
}

pub fn parse_splits(text: &str, ids: &BTreeSet<String>) -> Result<BTreeMap<String, Split>> {
    let mut out = BTreeMap::new();
    for (line, f) in rows(text, &SPLITS_HEADER)? {
        let id = known(ids, f[0], line)?;
        let split = f[1].parse().map_err(|e: Error| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        out.insert(id.to_string(), split);
    }
    Ok(out)
}

pub fn write_labels(records: &[ProteinRecord]) -> String {
    let mut out = LABELS_HEADER.join("\t") + "\n";
    for r in records {
        for l in &r.labels {
            out.push_str(&format!("{}\t{}\n", r.id, l));
        }
    }
    out
}

/// One row per maximal run of annotated residues.
pub fn write_annotations(records: &[ProteinRecord]) -> String {
    let mut out = ANNOTATIONS_HEADER.join("\t") + "\n";
    for r in records {
        for (kind, mask) in &r.annotations {
            let mut i = 0;
            while i < mask.len() {
                if !mask[i] {
                    i += 1;
                    continue;
                }
                let start = i;
                while i < mask.len() && mask[i] {
                    i += 1;
                }
                out.push_str(&format!("{}\t{}\t{}\t{}\n", r.id, kind, start + 1, i));
            }
        }
    }
    out
}

pub fn write_splits(records: &[ProteinRecord]) -> String {
    let mut out = SPLITS_HEADER.join("\t") + "\n";
    for r in records {
        if let Some(s) = r.split {
            out.push_str(&format!("{}\t{}\n", r.id, s.as_str()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lengths(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn ids(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_active_site() {
        let t = parse_annotations(
            "protein_id\tannotation_type\tstart\tend\np1\tactive_site\t65\t65\n",
            &lengths(&[("p1", 120)]),
        )
        .unwrap();
        let mask = &t["p1"][&AnnotationType::ActiveSite];
        assert_eq!(mask.len(), 120);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 1);
        assert!(mask[64]);
    }

    #[test]
    fn overlapping_ranges_union() {
        let t = parse_annotations(
            "protein_id\tannotation_type\tstart\tend\n# comment\np1\tmotif\t3\t6\np1\tmotif\t5\t9\n",
            &lengths(&[("p1", 12)]),
        )
        .unwrap();
        let on: Vec<usize> = t["p1"][&AnnotationType::Motif]
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(on, (2..=8).collect::<Vec<_>>());
    }

    #[test]
    fn annotation_errors_name_the_row() {
        let l = lengths(&[("p1", 10)]);
        let h = "protein_id\tannotation_type\tstart\tend\n";
        for (body, line) in [
            ("p1\tmotif\t1\t0\n", 2),
            ("p1\tmotif\t5\t3\n", 2),
            ("p1\tmotif\t1\t2\np1\tmotif\t5\t11\n", 3),
            ("p9\tmotif\t1\t2\n", 2),
            ("p1\thelix\t1\t2\n", 2),
        ] {
            match parse_annotations(&format!("{h}{body}"), &l) {
                Err(Error::Parse { line: got, .. }) => assert_eq!(got, line, "{body}"),
                other => panic!("{body}: {other:?}"),
            }
        }
        assert!(parse_annotations("id\ttype\n", &l).is_err());
    }

    #[test]
    fn labels() {
        let t = parse_labels(
            "protein_id\tclass_id\np1\tGO:0016020\np1\tGO:0005488\np1\tGO:0005488\n",
            &ids(&["p1", "p2"]),
        )
        .unwrap();
        assert_eq!(t["p1"].len(), 2);
        assert!(!t.contains_key("p2"));
        assert!(parse_labels("", &ids(&["p1"])).unwrap().is_empty());
        assert!(parse_labels("protein_id\tclass_id\nzz\tA\n", &ids(&["p1"])).is_err());
    }

    #[test]
    fn splits() {
        let t = parse_splits("protein_id\tsplit\np1\ttrain\np2\ttest\n", &ids(&["p1", "p2"])).unwrap();
        assert_eq!(t["p2"], Split::Test);
        assert!(parse_splits("protein_id\tsplit\np1\tholdout\n", &ids(&["p1"])).is_err());
    }
}
