//! Formal objects of the optimization problem: abstraction levels, programs,
//! rewrite/lowering tools, compiler pipelines and budget accounting.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A position in the ordered set of languages. Lower ordinals are higher
/// abstraction (ordinal 1 is the source language).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AbstractionLevel {
    pub ordinal: u32,
    pub name: String,
}

impl AbstractionLevel {
    pub fn new(ordinal: u32, name: impl Into<String>) -> Self {
        Self {
            ordinal,
            name: name.into(),
        }
    }

    pub fn source() -> Self {
        Self::new(1, "Source")
    }

    pub fn ir() -> Self {
        Self::new(2, "IR")
    }

    pub fn assembly() -> Self {
        Self::new(3, "Assembly")
    }

    /// Identifier used for the level agent tool of this level, e.g. `ir_agent`.
    pub fn agent_tool_id(&self) -> String {
        format!("{}_agent", self.name.to_lowercase())
    }
}

impl PartialOrd for AbstractionLevel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for AbstractionLevel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.ordinal
            .cmp(&other.ordinal)
            .then_with(|| self.name.cmp(&other.name))
    }
}

impl fmt::Display for AbstractionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelInfo {
    pub ordinal: u32,
    pub name: String,
    /// Free-text description substituted into the level agent prompt.
    pub description: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LevelSetError {
    #[error("level set is empty")]
    Empty,
    #[error("level ordinals must form the contiguous range 1..={expected_max}, found {found:?}")]
    NonContiguous { expected_max: u32, found: Vec<u32> },
    #[error("duplicate level name {0:?}")]
    DuplicateName(String),
}

/// The ordered set of languages L1..Ln.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LevelInfo>", into = "Vec<LevelInfo>")]
pub struct LevelSet {
    levels: Vec<LevelInfo>,
}

impl LevelSet {
    pub fn new(mut levels: Vec<LevelInfo>) -> Result<Self, LevelSetError> {
        if levels.is_empty() {
            return Err(LevelSetError::Empty);
        }
        levels.sort_by_key(|l| l.ordinal);
        let ordinals: Vec<u32> = levels.iter().map(|l| l.ordinal).collect();
        let expected: Vec<u32> = (1..=levels.len() as u32).collect();
        if ordinals != expected {
            return Err(LevelSetError::NonContiguous {
                expected_max: levels.len() as u32,
                found: ordinals,
            });
        }
        for (i, l) in levels.iter().enumerate() {
            if levels[..i].iter().any(|o| o.name == l.name) {
                return Err(LevelSetError::DuplicateName(l.name.clone()));
            }
        }
        Ok(Self { levels })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> impl Iterator<Item = AbstractionLevel> + '_ {
        self.levels
            .iter()
            .map(|l| AbstractionLevel::new(l.ordinal, l.name.clone()))
    }

    pub fn first(&self) -> AbstractionLevel {
        self.levels().next().expect("level set is non-empty")
    }

    pub fn last(&self) -> AbstractionLevel {
        self.levels().last().expect("level set is non-empty")
    }

    pub fn by_name(&self, name: &str) -> Option<AbstractionLevel> {
        self.levels().find(|l| l.name.eq_ignore_ascii_case(name))
    }

    pub fn by_ordinal(&self, ordinal: u32) -> Option<AbstractionLevel> {
        self.levels().find(|l| l.ordinal == ordinal)
    }

    pub fn contains(&self, level: &AbstractionLevel) -> bool {
        self.levels
            .iter()
            .any(|l| l.ordinal == level.ordinal && l.name == level.name)
    }

    pub fn description(&self, level: &AbstractionLevel) -> Option<&str> {
        self.levels
            .iter()
            .find(|l| l.ordinal == level.ordinal)
            .map(|l| l.description.as_str())
    }
}

impl Default for LevelSet {
    fn default() -> Self {
        Self::new(vec![
            LevelInfo {
                ordinal: 1,
                name: "Source".into(),
                description: "C source code (a complete, self-contained C program with a main function)".into(),
            },
            LevelInfo {
                ordinal: 2,
                name: "IR".into(),
                description: "LLVM IR in textual form (a complete .ll module with a main function)".into(),
            },
            LevelInfo {
                ordinal: 3,
                name: "Assembly".into(),
                description: "x86-64 assembly in AT&T syntax (a complete .s file exporting main)".into(),
            },
        ])
        .expect("default level set is valid")
    }
}

impl TryFrom<Vec<LevelInfo>> for LevelSet {
    type Error = LevelSetError;

    fn try_from(levels: Vec<LevelInfo>) -> Result<Self, Self::Error> {
        Self::new(levels)
    }
}

impl From<LevelSet> for Vec<LevelInfo> {
    fn from(set: LevelSet) -> Self {
        set.levels
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProgramError {
    #[error("program text is empty")]
    EmptyText,
    #[error("perf baseline must be positive, got {0}")]
    NonPositivePerf(f64),
}

/// Program text at one abstraction level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub level: AbstractionLevel,
    text: String,
    pub provenance: Option<String>,
    perf_baseline: Option<f64>,
}

impl Program {
    pub fn new(level: AbstractionLevel, text: impl Into<String>) -> Result<Self, ProgramError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ProgramError::EmptyText);
        }
        Ok(Self {
            level,
            text,
            provenance: None,
            perf_baseline: None,
        })
    }

    pub fn with_provenance(mut self, tool: impl Into<String>) -> Self {
        self.provenance = Some(tool.into());
        self
    }

    pub fn with_perf(mut self, perf: f64) -> Result<Self, ProgramError> {
        if !(perf > 0.0) {
            return Err(ProgramError::NonPositivePerf(perf));
        }
        self.perf_baseline = Some(perf);
        Ok(self)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn perf_baseline(&self) -> Option<f64> {
        self.perf_baseline
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToolKind {
    CompilerComponent,
    LevelAgent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToolClass {
    Rewrite,
    Lowering,
    Invalid,
}

pub fn classify_tool(domain: &AbstractionLevel, range: &AbstractionLevel) -> ToolClass {
    match domain.ordinal.cmp(&range.ordinal) {
        Ordering::Equal => ToolClass::Rewrite,
        Ordering::Less => ToolClass::Lowering,
        Ordering::Greater => ToolClass::Invalid,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ToolError {
    #[error("tool {0}: range is above domain")]
    InvalidDirection(String),
    #[error("tool {0}: level agents must be unit-cost rewrites")]
    BadLevelAgent(String),
    #[error("tool {0}: compiler components must have zero cost")]
    CostlyCompiler(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub id: String,
    pub kind: ToolKind,
    pub domain: AbstractionLevel,
    pub range: AbstractionLevel,
    pub cost: u64,
}

impl ToolDescriptor {
    pub fn compiler(
        id: impl Into<String>,
        domain: AbstractionLevel,
        range: AbstractionLevel,
    ) -> Result<Self, ToolError> {
        Self {
            id: id.into(),
            kind: ToolKind::CompilerComponent,
            domain,
            range,
            cost: 0,
        }
        .validated()
    }

    pub fn level_agent(level: AbstractionLevel) -> Self {
        Self {
            id: level.agent_tool_id(),
            kind: ToolKind::LevelAgent,
            domain: level.clone(),
            range: level,
            cost: 1,
        }
    }

    pub fn validated(self) -> Result<Self, ToolError> {
        if classify_tool(&self.domain, &self.range) == ToolClass::Invalid {
            return Err(ToolError::InvalidDirection(self.id));
        }
        match self.kind {
            ToolKind::LevelAgent if self.domain != self.range || self.cost != 1 => {
                Err(ToolError::BadLevelAgent(self.id))
            }
            ToolKind::CompilerComponent if self.cost != 0 => Err(ToolError::CostlyCompiler(self.id)),
            _ => Ok(self),
        }
    }

    pub fn class(&self) -> ToolClass {
        classify_tool(&self.domain, &self.range)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineDefinition {
    pub tools: Vec<ToolDescriptor>,
    pub sequence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// (a) the first tool does not start at level 1 (or the sequence is empty).
    FirstDomainNotTop { found: Option<u32> },
    /// (b) the last tool does not end at level n (or the sequence is empty).
    LastRangeNotBottom { found: Option<u32> },
    /// (c) range of `sequence[pair]` differs from the domain of `sequence[pair + 1]`.
    ChainMismatch { pair: usize },
    /// (d) a tool that is neither a rewrite nor a lowering.
    InvalidTool { id: String },
    UnknownTool { index: usize, id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::FirstDomainNotTop { found } => {
                write!(f, "first tool must take level 1 as input (found {found:?})")
            }
            Violation::LastRangeNotBottom { found } => {
                write!(f, "last tool must produce the lowest level (found {found:?})")
            }
            Violation::ChainMismatch { pair } => {
                write!(f, "tools at positions {pair} and {} do not chain", pair + 1)
            }
            Violation::InvalidTool { id } => write!(f, "tool {id} lowers upward"),
            Violation::UnknownTool { index, id } => {
                write!(f, "sequence entry {index} references unknown tool {id}")
            }
        }
    }
}

impl PipelineDefinition {
    /// The three-component compiler over the default level set.
    pub fn default_compiler() -> Self {
        let (s, i, a) = (
            AbstractionLevel::source(),
            AbstractionLevel::ir(),
            AbstractionLevel::assembly(),
        );
        let tools = vec![
            ToolDescriptor::compiler("frontend", s, i.clone()).unwrap(),
            ToolDescriptor::compiler("middle_end", i.clone(), i.clone()).unwrap(),
            ToolDescriptor::compiler("backend", i, a).unwrap(),
        ];
        Self {
            sequence: tools.iter().map(|t| t.id.clone()).collect(),
            tools,
        }
    }

    pub fn tool(&self, id: &str) -> Option<&ToolDescriptor> {
        self.tools.iter().find(|t| t.id == id)
    }

    /// Tools of the sequence in order, skipping ids that do not resolve.
    pub fn resolved(&self) -> impl Iterator<Item = &ToolDescriptor> + '_ {
        self.sequence.iter().filter_map(|id| self.tool(id))
    }

    /// The sequence suffix that starts at the first tool whose domain is `level`.
    pub fn lowering_path(&self, level: &AbstractionLevel) -> Option<Vec<&ToolDescriptor>> {
        let tools: Vec<&ToolDescriptor> = self.resolved().collect();
        let start = tools.iter().position(|t| t.domain.ordinal == level.ordinal)?;
        Some(tools[start..].to_vec())
    }
}

pub fn validate_pipeline(def: &PipelineDefinition, levels: &LevelSet) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let mut seq = Vec::with_capacity(def.sequence.len());
    for (index, id) in def.sequence.iter().enumerate() {
        match def.tool(id) {
            Some(t) => seq.push(t),
            None => violations.push(Violation::UnknownTool {
                index,
                id: id.clone(),
            }),
        }
    }
    let top = levels.first().ordinal;
    let bottom = levels.last().ordinal;
    let first = seq.first().map(|t| t.domain.ordinal);
    if first != Some(top) {
        violations.push(Violation::FirstDomainNotTop { found: first });
    }
    let last = seq.last().map(|t| t.range.ordinal);
    if last != Some(bottom) {
        violations.push(Violation::LastRangeNotBottom { found: last });
    }
    for (pair, w) in seq.windows(2).enumerate() {
        if w[0].range.ordinal != w[1].domain.ordinal {
            violations.push(Violation::ChainMismatch { pair });
        }
    }
    for t in &def.tools {
        if t.class() == ToolClass::Invalid {
            violations.push(Violation::InvalidTool { id: t.id.clone() });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("budget exceeded: {spent} spent of {total}, tool {tool} costs {cost}")]
pub struct BudgetExceeded {
    pub tool: String,
    pub cost: u64,
    pub spent: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BudgetLedger {
    total: u64,
    spent: u64,
    calls: BTreeMap<String, u64>,
}

impl BudgetLedger {
    pub fn new(total: u64) -> Self {
        Self {
            total,
            spent: 0,
            calls: BTreeMap::new(),
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn spent(&self) -> u64 {
        self.spent
    }

    pub fn remaining(&self) -> u64 {
        self.total - self.spent
    }

    pub fn calls(&self) -> &BTreeMap<String, u64> {
        &self.calls
    }

    pub fn call_count(&self, tool_id: &str) -> u64 {
        self.calls.get(tool_id).copied().unwrap_or(0)
    }

    pub fn charge(&self, tool: &ToolDescriptor) -> Result<Self, BudgetExceeded> {
        if self.spent + tool.cost > self.total {
            return Err(BudgetExceeded {
                tool: tool.id.clone(),
                cost: tool.cost,
                spent: self.spent,
                total: self.total,
            });
        }
        let mut next = self.clone();
        next.spent += tool.cost;
        *next.calls.entry(tool.id.clone()).or_insert(0) += 1;
        Ok(next)
    }

    /// True when a unit-cost level agent can no longer be charged.
    pub fn is_exhausted(&self) -> bool {
        self.spent + 1 > self.total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn levels3() -> Vec<AbstractionLevel> {
        LevelSet::default().levels().collect()
    }

    #[test]
    fn classify_examples() {
        let (s, i, a) = (
            AbstractionLevel::source(),
            AbstractionLevel::ir(),
            AbstractionLevel::assembly(),
        );
        assert_eq!(classify_tool(&s, &s), ToolClass::Rewrite);
        assert_eq!(classify_tool(&s, &i), ToolClass::Lowering);
        assert_eq!(classify_tool(&a, &i), ToolClass::Invalid);
    }

    #[test]
    fn default_pipeline_is_valid() {
        assert_eq!(
            validate_pipeline(&PipelineDefinition::default_compiler(), &LevelSet::default()),
            Ok(())
        );
    }

    #[test]
    fn empty_sequence_violates_a_and_b() {
        let mut def = PipelineDefinition::default_compiler();
        def.sequence.clear();
        let v = validate_pipeline(&def, &LevelSet::default()).unwrap_err();
        assert_eq!(
            v,
            vec![
                Violation::FirstDomainNotTop { found: None },
                Violation::LastRangeNotBottom { found: None }
            ]
        );
    }

    #[test]
    fn skipping_middle_breaks_chain_at_pair_zero() {
        let l = levels3();
        let tools = vec![
            ToolDescriptor::compiler("frontend", l[0].clone(), l[1].clone()).unwrap(),
            ToolDescriptor::compiler("skip", l[0].clone(), l[2].clone()).unwrap(),
        ];
        let def = PipelineDefinition {
            tools,
            sequence: vec!["frontend".into(), "skip".into()],
        };
        let v = validate_pipeline(&def, &LevelSet::default()).unwrap_err();
        assert_eq!(v, vec![Violation::ChainMismatch { pair: 0 }]);
    }

    #[test]
    fn unknown_and_invalid_tools_are_reported() {
        let l = levels3();
        let mut def = PipelineDefinition::default_compiler();
        def.tools.push(ToolDescriptor {
            id: "lift".into(),
            kind: ToolKind::CompilerComponent,
            domain: l[2].clone(),
            range: l[1].clone(),
            cost: 0,
        });
        def.sequence.push("ghost".into());
        let v = validate_pipeline(&def, &LevelSet::default()).unwrap_err();
        assert!(v.contains(&Violation::UnknownTool {
            index: 3,
            id: "ghost".into()
        }));
        assert!(v.contains(&Violation::InvalidTool { id: "lift".into() }));
    }

    #[test]
    fn repeated_tools_are_permitted() {
        let mut def = PipelineDefinition::default_compiler();
        def.sequence = vec![
            "frontend".into(),
            "middle_end".into(),
            "middle_end".into(),
            "backend".into(),
        ];
        assert!(validate_pipeline(&def, &LevelSet::default()).is_ok());
    }

    #[test]
    fn charge_examples() {
        let agent = ToolDescriptor::level_agent(AbstractionLevel::source());
        let fe = PipelineDefinition::default_compiler().tools[0].clone();
        let mut ledger = BudgetLedger::new(3);
        ledger = ledger.charge(&agent).unwrap().charge(&agent).unwrap();
        assert_eq!(ledger.spent(), 2);
        ledger = ledger.charge(&agent).unwrap();
        assert_eq!(ledger.spent(), 3);
        let after_free = ledger.charge(&fe).unwrap();
        assert_eq!(after_free.spent(), 3);
        assert_eq!(after_free.call_count("frontend"), 1);
        assert!(matches!(ledger.charge(&agent), Err(BudgetExceeded { spent: 3, .. })));
    }

    #[test]
    fn exhaustion_examples() {
        assert!(BudgetLedger::new(0).is_exhausted());
        let agent = ToolDescriptor::level_agent(AbstractionLevel::ir());
        let mut l = BudgetLedger::new(18);
        for _ in 0..17 {
            l = l.charge(&agent).unwrap();
        }
        assert!(!l.is_exhausted());
        l = l.charge(&agent).unwrap();
        assert!(l.is_exhausted());
    }

    #[test]
    fn level_set_rejects_gaps() {
        let err = LevelSet::new(vec![
            LevelInfo {
                ordinal: 1,
                name: "A".into(),
                description: String::new(),
            },
            LevelInfo {
                ordinal: 3,
                name: "B".into(),
                description: String::new(),
            },
        ])
        .unwrap_err();
        assert!(matches!(err, LevelSetError::NonContiguous { .. }));
    }

    #[test]
    fn tool_invariants() {
        let s = AbstractionLevel::source();
        let a = AbstractionLevel::assembly();
        assert!(ToolDescriptor::compiler("up", a.clone(), s.clone()).is_err());
        let bad = ToolDescriptor {
            id: "x".into(),
            kind: ToolKind::LevelAgent,
            domain: s.clone(),
            range: a,
            cost: 1,
        };
        assert_eq!(bad.validated(), Err(ToolError::BadLevelAgent("x".into())));
        assert_eq!(ToolDescriptor::level_agent(s).id, "source_agent");
    }

    #[test]
    fn program_invariants() {
        assert_eq!(
            Program::new(AbstractionLevel::source(), "  \n"),
            Err(ProgramError::EmptyText)
        );
        let p = Program::new(AbstractionLevel::source(), "int main(){}").unwrap();
        assert!(p.clone().with_perf(0.0).is_err());
        assert_eq!(p.with_perf(1.5).unwrap().perf_baseline(), Some(1.5));
    }
}
