//! Code registries. The order of codes fixes the layout of every network
//! vector built against the registry.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::OnaError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Code {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CodeRegistry {
    codes: Vec<Code>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

const DEFAULT_CODES: &[(&str, &str)] = &[
    ("NewIdea", "introduces an idea not yet discussed"),
    ("Fact", "states a fact or piece of information"),
    ("ActionableSuggestion", "proposes a concrete next step"),
    ("Remix", "builds on or recombines an earlier idea"),
    ("Agreement", "agrees with a previous turn"),
    ("Disagreement", "disagrees with a previous turn"),
    ("Negotiation", "weighs options or trades off positions"),
    ("SocialTalk", "off-task or relational talk"),
    ("InviteAgent", "brings the agent into the discussion"),
    ("RespondToHandRaise", "reacts to the agent raising its hand"),
    ("RegulateAgent", "tells the agent to stop, wait or change behaviour"),
    ("StrategyAboutAgent", "discusses how to use the agent"),
    ("ReferenceAgentSpeech", "refers back to something the agent said"),
    ("ClarifyingQuestion", "asks for clarification"),
];

#[derive(Deserialize)]
struct RegistryFile {
    codes: Vec<Code>,
}

impl CodeRegistry {
    pub fn new(codes: Vec<Code>) -> Result<Self, OnaError> {
        if codes.is_empty() {
            return Err(OnaError::Registry("registry has no codes".into()));
        }
        let mut index = BTreeMap::new();
        for (i, c) in codes.iter().enumerate() {
            if c.name.trim().is_empty() || c.name.contains(';') {
                return Err(OnaError::Registry(format!("bad code name {:?}", c.name)));
            }
            if index.insert(c.name.clone(), i).is_some() {
                return Err(OnaError::Registry(format!("duplicate code {}", c.name)));
            }
        }
        Ok(Self { codes, index })
    }

    /// Registry from bare names, in order.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, OnaError> {
        Self::new(names.iter().map(|n| Code { name: n.as_ref().to_string(), description: String::new() }).collect())
    }

    /// Reads `{"codes": [{"name": ..., "description": ...}, ...]}`.
    pub fn load(path: &Path) -> Result<Self, OnaError> {
        let raw = std::fs::read_to_string(path).map_err(|e| OnaError::Io(path.display().to_string(), e))?;
        let file: RegistryFile = serde_json::from_str(&raw).map_err(|e| OnaError::Registry(e.to_string()))?;
        Self::new(file.codes)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[Code] {
        &self.codes
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.codes[i].name
    }

    /// Index of the ground→response pair in a network vector.
    pub fn pair_index(&self, ground: usize, response: usize) -> usize {
        ground * self.len() + response
    }

    pub fn pair_name(&self, pair: usize) -> String {
        format!("{}->{}", self.name(pair / self.len()), self.name(pair % self.len()))
    }
}

impl Default for CodeRegistry {
    fn default() -> Self {
        let codes =
            DEFAULT_CODES.iter().map(|(n, d)| Code { name: (*n).into(), description: (*d).into() }).collect();
        Self::new(codes).expect("default registry is well formed")
    }
}

impl<'de> Deserialize<'de> for CodeRegistry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let file = RegistryFile::deserialize(d)?;
        Self::new(file.codes).map_err(serde::de::Error::custom)
    }
}
