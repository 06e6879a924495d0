//! Coded transcript input: `conversationId,seq,speaker,directedToAgent,codes`
//! with codes separated by semicolons.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::registry::CodeRegistry;
use crate::OnaError;

pub const HEADER: [&str; 5] = ["conversationId", "seq", "speaker", "directedToAgent", "codes"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CodedTurn {
    pub conversation_id: String,
    pub seq: u64,
    pub speaker: String,
    pub directed_to_agent: bool,
    /// Registry indices.
    pub codes: BTreeSet<usize>,
}

/// Turns of one conversation in `seq` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<CodedTurn>,
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" | "" => Some(false),
        _ => None,
    }
}

pub fn ingest_reader(reader: impl Read, registry: &CodeRegistry) -> Result<Vec<Conversation>, OnaError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| OnaError::Parse { line: 1, detail: e.to_string() })?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(OnaError::Parse { line: 1, detail: format!("expected header {}", HEADER.join(",")) });
    }
    let mut by_conv: BTreeMap<String, Vec<CodedTurn>> = BTreeMap::new();
    let mut seen: BTreeSet<(String, u64)> = BTreeSet::new();
    for record in rdr.records() {
        let record = record.map_err(|e| OnaError::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            detail: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |detail: String| OnaError::Parse { line, detail };
        let conversation_id = record[0].to_string();
        if conversation_id.is_empty() {
            return Err(bad("empty conversationId".into()));
        }
        let seq: u64 = record[1].parse().map_err(|_| bad(format!("bad seq {:?}", &record[1])))?;
        let directed_to_agent =
            parse_bool(&record[3]).ok_or_else(|| bad(format!("bad directedToAgent {:?}", &record[3])))?;
        let mut codes = BTreeSet::new();
        for name in record[4].split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let i = registry.index_of(name).ok_or_else(|| OnaError::UnknownCode { line, code: name.into() })?;
            codes.insert(i);
        }
        if !seen.insert((conversation_id.clone(), seq)) {
            return Err(bad(format!("duplicate seq {seq} in {conversation_id}")));
        }
        by_conv.entry(conversation_id.clone()).or_default().push(CodedTurn {
            conversation_id,
            seq,
            speaker: record[2].to_string(),
            directed_to_agent,
            codes,
        });
    }
    Ok(by_conv
        .into_iter()
        .map(|(id, mut turns)| {
            turns.sort_by_key(|t| t.seq);
            Conversation { id, turns }
        })
        .collect())
}

pub fn ingest(path: &Path, registry: &CodeRegistry) -> Result<Vec<Conversation>, OnaError> {
    let file = std::fs::File::open(path).map_err(|e| OnaError::Io(path.display().to_string(), e))?;
    ingest_reader(file, registry)
}

/// Attribute table for conversations: a CSV whose first column is
/// `conversationId` and whose other columns are free-form labels.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, BTreeMap<String, String>>, OnaError> {
    let file = std::fs::File::open(path).map_err(|e| OnaError::Io(path.display().to_string(), e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = rdr.headers().map_err(|e| OnaError::Parse { line: 1, detail: e.to_string() })?.clone();
    if header.get(0) != Some("conversationId") {
        return Err(OnaError::Parse { line: 1, detail: "first column must be conversationId".into() });
    }
    let mut out = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| OnaError::Parse { line: 0, detail: e.to_string() })?;
        let attrs = header.iter().zip(record.iter()).skip(1).map(|(k, v)| (k.to_string(), v.to_string())).collect();
        out.insert(record[0].to_string(), attrs);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> CodeRegistry {
        CodeRegistry::from_names(&["A", "B", "C"]).unwrap()
    }

    #[test]
    fn groups_and_orders_by_seq() {
        let csv = "conversationId,seq,speaker,directedToAgent,codes\nc1,2,D2,false,B\nc2,1,D1,true,A;C\nc1,1,D1,0,A\n";
        let convs = ingest_reader(csv.as_bytes(), &reg()).unwrap();
        assert_eq!(convs.len(), 2);
        assert_eq!(convs[0].turns.iter().map(|t| t.seq).collect::<Vec<_>>(), vec![1, 2]);
        assert!(convs[1].turns[0].directed_to_agent);
        assert_eq!(convs[1].turns[0].codes, BTreeSet::from([0, 2]));
    }

    #[test]
    fn unknown_code_reports_line() {
        let csv = "conversationId,seq,speaker,directedToAgent,codes\nc1,1,D1,false,A\nc1,2,D2,false,Z\n";
        match ingest_reader(csv.as_bytes(), &reg()) {
            Err(OnaError::UnknownCode { line, code }) => {
                assert_eq!(line, 3);
                assert_eq!(code, "Z");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_header_rejected() {
        let csv = "conv,seq,speaker,directed,codes\n";
        assert!(matches!(ingest_reader(csv.as_bytes(), &reg()), Err(OnaError::Parse { line: 1, .. })));
    }

    #[test]
    fn bad_seq_reports_line() {
        let csv = "conversationId,seq,speaker,directedToAgent,codes\nc1,x,D1,false,A\n";
        assert!(matches!(ingest_reader(csv.as_bytes(), &reg()), Err(OnaError::Parse { line: 2, .. })));
    }

    #[test]
    fn empty_codes_allowed() {
        let csv = "conversationId,seq,speaker,directedToAgent,codes\nc1,1,D1,false,\n";
        let convs = ingest_reader(csv.as_bytes(), &reg()).unwrap();
        assert!(convs[0].turns[0].codes.is_empty());
    }
}
