//! File formats shared by the command-line tool: the networks file and
//! `key=value` group selectors over a conversation label table.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::network::{Accumulation, OnaNetwork};
use crate::projection::Projection;
use crate::OnaError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NetsFile {
    pub codes: Vec<String>,
    pub window: usize,
    pub accumulation: Accumulation,
    /// One network per conversation.
    pub networks: Vec<OnaNetwork>,
    /// Raw summed networks per label value, when grouping was requested.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aggregates: BTreeMap<String, OnaNetwork>,
}

impl NetsFile {
    pub fn read(path: &Path) -> Result<Self, OnaError> {
        let raw = std::fs::read_to_string(path).map_err(|e| OnaError::Io(path.display().to_string(), e))?;
        serde_json::from_str(&raw).map_err(|e| OnaError::Parse { line: e.line(), detail: e.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSpec {
    pub key: String,
    pub value: String,
}

impl GroupSpec {
    pub fn name(&self) -> String {
        format!("{}={}", self.key, self.value)
    }
}

/// Parses `mode=roundtable,mode=breakout`.
pub fn parse_groups(raw: &str) -> Result<[GroupSpec; 2], OnaError> {
    let specs: Vec<GroupSpec> = raw
        .split(',')
        .map(|part| {
            part.split_once('=')
                .map(|(k, v)| GroupSpec { key: k.trim().into(), value: v.trim().into() })
                .ok_or_else(|| OnaError::Groups(format!("expected key=value, got {part:?}")))
        })
        .collect::<Result<_, _>>()?;
    match <[GroupSpec; 2]>::try_from(specs) {
        Ok(pair) if pair[0] != pair[1] => Ok(pair),
        _ => Err(OnaError::Groups(format!("need exactly two distinct groups, got {raw:?}"))),
    }
}

/// Picks the networks matching either group and labels them with the
/// group name. Units matching neither are left out.
pub fn select(
    nets: &[OnaNetwork],
    labels: &BTreeMap<String, BTreeMap<String, String>>,
    groups: &[GroupSpec; 2],
) -> Result<(Vec<OnaNetwork>, Vec<String>), OnaError> {
    let mut picked = Vec::new();
    let mut names = Vec::new();
    for net in nets {
        let attrs = labels.get(&net.unit_id);
        let hits: Vec<&GroupSpec> =
            groups.iter().filter(|g| attrs.and_then(|a| a.get(&g.key)).is_some_and(|v| *v == g.value)).collect();
        match hits.as_slice() {
            [] => {}
            [g] => {
                picked.push(net.clone());
                names.push(g.name());
            }
            _ => return Err(OnaError::Groups(format!("unit {} matches both groups", net.unit_id))),
        }
    }
    Ok((picked, names))
}

pub fn projection_csv(p: &Projection) -> String {
    let mut out = String::from("unitId,group,x,y\n");
    for pt in &p.points {
        out.push_str(&format!("{},{},{},{}\n", pt.unit_id, pt.group, pt.x, pt.y));
    }
    out
}
