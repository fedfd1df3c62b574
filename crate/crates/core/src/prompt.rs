//! Prompt templates for task generation and task classification.
//!
//! Six templates exist: {generate feasible, generate infeasible, classify}
//! x {vanilla, challenge + QAP}. Bodies use `{placeholder}` syntax with
//! `{{` / `}}` as literal braces. Built-in defaults can be overridden per
//! file from a templates directory:
//!
//! ```text
//! templates/
//!   generate_feasible.vanilla.txt
//!   generate_infeasible.challenge_qap.txt
//!   classify.vanilla.txt
//!   descriptions.toml        # optional [types] / [reasons] text overrides
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::taxonomy::{FeasibilityLabel, InfeasibilityReason, SelfKnowledgeType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    Vanilla,
    ChallengeQap,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 2] = [PromptVariant::Vanilla, PromptVariant::ChallengeQap];

    pub fn slug(self) -> &'static str {
        match self {
            PromptVariant::Vanilla => "vanilla",
            PromptVariant::ChallengeQap => "challenge_qap",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            PromptVariant::Vanilla => "Vanilla",
            PromptVariant::ChallengeQap => "Challenge + QAP",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for PromptVariant {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vanilla" => Ok(PromptVariant::Vanilla),
            "challenge-qap" | "challenge_qap" => Ok(PromptVariant::ChallengeQap),
            other => Err(PromptError::UnknownVariant(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    GenerateFeasible,
    GenerateInfeasible,
    Classify,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [
        PromptKind::GenerateFeasible,
        PromptKind::GenerateInfeasible,
        PromptKind::Classify,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            PromptKind::GenerateFeasible => "generate_feasible",
            PromptKind::GenerateInfeasible => "generate_infeasible",
            PromptKind::Classify => "classify",
        }
    }

    fn required_placeholders(self) -> &'static [Placeholder] {
        match self {
            PromptKind::GenerateFeasible => &[Placeholder::TypeName, Placeholder::TypeDescription],
            PromptKind::GenerateInfeasible => {
                &[Placeholder::ReasonName, Placeholder::ReasonDescription]
            }
            PromptKind::Classify => &[Placeholder::ReasonCatalog, Placeholder::TaskText],
        }
    }

    /// Placeholders a template of this kind may reference.
    fn allowed_placeholders(self) -> &'static [Placeholder] {
        match self {
            PromptKind::GenerateFeasible => &[Placeholder::TypeName, Placeholder::TypeDescription],
            PromptKind::GenerateInfeasible => &[
                Placeholder::TypeName,
                Placeholder::ReasonName,
                Placeholder::ReasonDescription,
            ],
            PromptKind::Classify => &[Placeholder::ReasonCatalog, Placeholder::TaskText],
        }
    }

    pub fn file_name(self, variant: PromptVariant) -> String {
        format!("{}.{}.txt", self.slug(), variant.slug())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Placeholder {
    TypeName,
    TypeDescription,
    ReasonName,
    ReasonDescription,
    ReasonCatalog,
    TaskText,
}

impl Placeholder {
    const ALL: [Placeholder; 6] = [
        Placeholder::TypeName,
        Placeholder::TypeDescription,
        Placeholder::ReasonName,
        Placeholder::ReasonDescription,
        Placeholder::ReasonCatalog,
        Placeholder::TaskText,
    ];

    fn name(self) -> &'static str {
        match self {
            Placeholder::TypeName => "type_name",
            Placeholder::TypeDescription => "type_description",
            Placeholder::ReasonName => "reason_name",
            Placeholder::ReasonDescription => "reason_description",
            Placeholder::ReasonCatalog => "reason_catalog",
            Placeholder::TaskText => "task_text",
        }
    }

    fn from_name(name: &str) -> Option<Placeholder> {
        Placeholder::ALL.iter().copied().find(|p| p.name() == name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template {template} is missing required placeholder {{{placeholder}}}")]
    MissingPlaceholder { template: String, placeholder: String },
    #[error("template {template} references unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder { template: String, placeholder: String },
    #[error("template {template} has an unbalanced brace at byte {offset}")]
    UnbalancedBrace { template: String, offset: usize },
    #[error("no description configured for {0}")]
    MissingDescription(String),
    #[error("reason catalog is empty")]
    EmptyCatalog,
    #[error("task text is empty")]
    EmptyTask,
    #[error("unknown prompt variant `{0}` (expected vanilla or challenge-qap)")]
    UnknownVariant(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid descriptions file {path}: {message}")]
    Descriptions { path: PathBuf, message: String },
}

/// Segment of a parsed template body.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Placeholder),
}

/// A validated template.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub variant: PromptVariant,
    pub body: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(
        kind: PromptKind,
        variant: PromptVariant,
        body: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let body = body.into();
        let name = kind.file_name(variant);
        let segments = parse_segments(&body, &name)?;
        let used: Vec<Placeholder> = segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(p) => Some(*p),
                Segment::Literal(_) => None,
            })
            .collect();
        if let Some(p) = used.iter().find(|p| !kind.allowed_placeholders().contains(p)) {
            return Err(PromptError::UnknownPlaceholder {
                template: name,
                placeholder: p.name().to_string(),
            });
        }
        if let Some(p) = kind.required_placeholders().iter().find(|p| !used.contains(p)) {
            return Err(PromptError::MissingPlaceholder {
                template: name,
                placeholder: p.name().to_string(),
            });
        }
        Ok(Self {
            kind,
            variant,
            body,
            segments,
        })
    }

    /// Hex SHA-256 of the template body.
    pub fn fingerprint(&self) -> String {
        sha256_hex(self.body.as_bytes())
    }

    fn render(&self, values: &BTreeMap<Placeholder, &str>) -> String {
        let mut out = String::with_capacity(self.body.len() + 256);
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                // Parse-time validation guarantees every slot has a value.
                Segment::Slot(p) => out.push_str(values.get(p).copied().unwrap_or_default()),
            }
        }
        out
    }
}

fn parse_segments(body: &str, template: &str) -> Result<Vec<Segment>, PromptError> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                literal.push('{');
                i += 2;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                literal.push('}');
                i += 2;
            }
            b'{' => {
                let close = body[i + 1..]
                    .find('}')
                    .map(|off| i + 1 + off)
                    .ok_or_else(|| PromptError::UnbalancedBrace {
                        template: template.to_string(),
                        offset: i,
                    })?;
                let name = &body[i + 1..close];
                let placeholder =
                    Placeholder::from_name(name).ok_or_else(|| PromptError::UnknownPlaceholder {
                        template: template.to_string(),
                        placeholder: name.to_string(),
                    })?;
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Slot(placeholder));
                i = close + 1;
            }
            b'}' => {
                return Err(PromptError::UnbalancedBrace {
                    template: template.to_string(),
                    offset: i,
                })
            }
            _ => {
                // Copy the whole UTF-8 scalar.
                let ch = body[i..].chars().next().expect("in bounds");
                literal.push(ch);
                i += ch.len_utf8();
            }
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

/// Text shown to the model for every type and reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Descriptions {
    types: BTreeMap<SelfKnowledgeType, String>,
    reasons: BTreeMap<InfeasibilityReason, String>,
}

impl Default for Descriptions {
    fn default() -> Self {
        Self {
            types: SelfKnowledgeType::ALL
                .iter()
                .map(|t| (*t, t.feasible_description().to_string()))
                .collect(),
            reasons: InfeasibilityReason::ALL
                .iter()
                .map(|r| (*r, r.description().to_string()))
                .collect(),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptionsFile {
    #[serde(default)]
    types: BTreeMap<SelfKnowledgeType, String>,
    #[serde(default)]
    reasons: BTreeMap<InfeasibilityReason, String>,
}

impl Descriptions {
    /// An empty set; every lookup fails until entries are inserted.
    pub fn empty() -> Self {
        Self {
            types: BTreeMap::new(),
            reasons: BTreeMap::new(),
        }
    }

    pub fn set_type(&mut self, t: SelfKnowledgeType, text: impl Into<String>) {
        self.types.insert(t, text.into());
    }

    pub fn set_reason(&mut self, r: InfeasibilityReason, text: impl Into<String>) {
        self.reasons.insert(r, text.into());
    }

    pub fn type_description(&self, t: SelfKnowledgeType) -> Result<&str, PromptError> {
        self.types
            .get(&t)
            .map(String::as_str)
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| PromptError::MissingDescription(format!("type {}", t.slug())))
    }

    pub fn reason_description(&self, r: InfeasibilityReason) -> Result<&str, PromptError> {
        self.reasons
            .get(&r)
            .map(String::as_str)
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| PromptError::MissingDescription(format!("reason {}", r.slug())))
    }

    /// Numbered list of every reason with its identifier, display name and
    /// description, one per line.
    pub fn reason_catalog(&self) -> Result<String, PromptError> {
        if self.reasons.is_empty() {
            return Err(PromptError::EmptyCatalog);
        }
        let mut out = String::new();
        for (i, r) in InfeasibilityReason::ALL.iter().enumerate() {
            let description = self.reason_description(*r)?;
            out.push_str(&format!(
                "{}. {} ({}): {}\n",
                i + 1,
                r.slug(),
                r.display_name(),
                description
            ));
        }
        out.pop();
        Ok(out)
    }

    fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (t, text) in &self.types {
            hasher.update(t.slug().as_bytes());
            hasher.update([0]);
            hasher.update(text.as_bytes());
            hasher.update([0]);
        }
        for (r, text) in &self.reasons {
            hasher.update(r.slug().as_bytes());
            hasher.update([0]);
            hasher.update(text.as_bytes());
            hasher.update([0]);
        }
        hex::encode(hasher.finalize())
    }
}

/// A prompt ready to send.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub kind: PromptKind,
    pub variant: PromptVariant,
    /// Set for generation prompts only.
    pub target_label: Option<FeasibilityLabel>,
}

/// Content hash of one template (or of the description set).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateFingerprint {
    pub name: String,
    pub sha256: String,
}

/// Renders generation and classification prompts.
#[derive(Debug, Clone)]
pub struct PromptForge {
    templates: BTreeMap<(PromptKind, PromptVariant), PromptTemplate>,
    descriptions: Descriptions,
}

impl PromptForge {
    pub fn builtin() -> Self {
        let mut templates = BTreeMap::new();
        for kind in PromptKind::ALL {
            for variant in PromptVariant::ALL {
                let t = PromptTemplate::parse(kind, variant, default_body(kind, variant))
                    .expect("built-in templates are valid");
                templates.insert((kind, variant), t);
            }
        }
        Self {
            templates,
            descriptions: Descriptions::default(),
        }
    }

    /// Built-in templates with per-file overrides from `dir`. Files that are
    /// absent keep their default.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut forge = Self::builtin();
        for kind in PromptKind::ALL {
            for variant in PromptVariant::ALL {
                let path = dir.join(kind.file_name(variant));
                match std::fs::read_to_string(&path) {
                    Ok(body) => {
                        forge
                            .templates
                            .insert((kind, variant), PromptTemplate::parse(kind, variant, body)?);
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                    Err(source) => return Err(PromptError::Io { path, source }),
                }
            }
        }
        let desc_path = dir.join("descriptions.toml");
        match std::fs::read_to_string(&desc_path) {
            Ok(text) => {
                let file: DescriptionsFile =
                    toml::from_str(&text).map_err(|e| PromptError::Descriptions {
                        path: desc_path.clone(),
                        message: e.to_string(),
                    })?;
                for (t, text) in file.types {
                    forge.descriptions.set_type(t, text);
                }
                for (r, text) in file.reasons {
                    forge.descriptions.set_reason(r, text);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(source) => {
                return Err(PromptError::Io {
                    path: desc_path,
                    source,
                })
            }
        }
        forge.check()?;
        Ok(forge)
    }

    pub fn with_descriptions(mut self, descriptions: Descriptions) -> Result<Self, PromptError> {
        self.descriptions = descriptions;
        self.check()?;
        Ok(self)
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.templates
            .insert((template.kind, template.variant), template);
        self
    }

    pub fn template(&self, kind: PromptKind, variant: PromptVariant) -> &PromptTemplate {
        &self.templates[&(kind, variant)]
    }

    pub fn descriptions(&self) -> &Descriptions {
        &self.descriptions
    }

    /// Every description must be present and non-empty.
    fn check(&self) -> Result<(), PromptError> {
        for t in SelfKnowledgeType::ALL {
            self.descriptions.type_description(t)?;
        }
        self.descriptions.reason_catalog()?;
        Ok(())
    }

    pub fn render_generation_prompt(
        &self,
        label: FeasibilityLabel,
        variant: PromptVariant,
    ) -> Result<RenderedPrompt, PromptError> {
        let mut values = BTreeMap::new();
        let kind = match label {
            FeasibilityLabel::Feasible(t) => {
                values.insert(Placeholder::TypeName, t.display_name());
                values.insert(
                    Placeholder::TypeDescription,
                    self.descriptions.type_description(t)?,
                );
                PromptKind::GenerateFeasible
            }
            FeasibilityLabel::Infeasible(r) => {
                values.insert(Placeholder::TypeName, r.self_knowledge_type().display_name());
                values.insert(Placeholder::ReasonName, r.display_name());
                values.insert(
                    Placeholder::ReasonDescription,
                    self.descriptions.reason_description(r)?,
                );
                PromptKind::GenerateInfeasible
            }
        };
        Ok(RenderedPrompt {
            text: self.template(kind, variant).render(&values),
            kind,
            variant,
            target_label: Some(label),
        })
    }

    pub fn render_classification_prompt(
        &self,
        task_text: &str,
        variant: PromptVariant,
    ) -> Result<RenderedPrompt, PromptError> {
        if task_text.trim().is_empty() {
            return Err(PromptError::EmptyTask);
        }
        let catalog = self.descriptions.reason_catalog()?;
        let mut values = BTreeMap::new();
        values.insert(Placeholder::ReasonCatalog, catalog.as_str());
        values.insert(Placeholder::TaskText, task_text);
        Ok(RenderedPrompt {
            text: self
                .template(PromptKind::Classify, variant)
                .render(&values),
            kind: PromptKind::Classify,
            variant,
            target_label: None,
        })
    }

    /// Template fingerprints plus one entry for the description set.
    pub fn fingerprints(&self) -> Vec<TemplateFingerprint> {
        let mut out: Vec<_> = self
            .templates
            .values()
            .map(|t| TemplateFingerprint {
                name: t.kind.file_name(t.variant),
                sha256: t.fingerprint(),
            })
            .collect();
        out.push(TemplateFingerprint {
            name: "descriptions".to_string(),
            sha256: self.descriptions.fingerprint(),
        });
        out
    }

    /// Writes every active template to `dir` so a run can be re-rendered
    /// with exactly the wording it used.
    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for t in self.templates.values() {
            std::fs::write(dir.join(t.kind.file_name(t.variant)), &t.body)?;
        }
        let file = DescriptionsFile {
            types: self.descriptions.types.clone(),
            reasons: self.descriptions.reasons.clone(),
        };
        let text = toml::to_string(&file).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("descriptions.toml"), text)
    }
}

impl Default for PromptForge {
    fn default() -> Self {
        Self::builtin()
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Sentence urging the model toward its own feasibility boundary.
pub const CHALLENGE_PREAMBLE: &str = "Challenge: this is a test of how well you know your own limits. \
Push as close to the edge of what you can and cannot do as you possibly can; \
easy or obvious tasks fail the challenge.";

/// Question-analysis instruction placed before the model responds.
pub const ANALYSIS_INSTRUCTION: &str = "Before you respond, analyse the request: \
state in one or two sentences what it requires and what would make a response correct. \
Then respond.";

/// Instructions for the machine-readable verdict block that ends every
/// classification response.
pub const VERDICT_INSTRUCTIONS: &str = "End your response with a verdict block, on its own lines, in exactly one of these two forms.\n\
If you answered the task:\n\
VERDICT: ANSWERED\n\
If the task is infeasible:\n\
VERDICT: INFEASIBLE\n\
REASON: <identifier of exactly one reason from the list above>";

const GENERATE_FEASIBLE_VANILLA: &str = "\
You are creating tasks that probe the boundary of what you are able to do.

Generate exactly one task that is feasible for you and tests the following type of self-knowledge.

Type of self-knowledge: {type_name}
Description: {type_description}

Write only the task instruction after the line `TASK:`. Do not solve the task.";

const GENERATE_FEASIBLE_CHALLENGE_QAP: &str = "\
You are creating tasks that probe the boundary of what you are able to do.

CHALLENGE

Generate exactly one task that is feasible for you and tests the following type of self-knowledge.

Type of self-knowledge: {type_name}
Description: {type_description}

ANALYSIS

Write the analysis after the line `ANALYSIS:` and then only the task instruction after the line `TASK:`. Do not solve the task.";

const GENERATE_INFEASIBLE_VANILLA: &str = "\
You are creating tasks that probe the boundary of what you are able to do.

Generate exactly one task that you cannot complete for the following reason for infeasibility. \
The task must be infeasible because of this reason alone.

Reason for infeasibility: {reason_name}
Description: {reason_description}

Write only the task instruction after the line `TASK:`. Do not explain why it is infeasible.";

const GENERATE_INFEASIBLE_CHALLENGE_QAP: &str = "\
You are creating tasks that probe the boundary of what you are able to do.

CHALLENGE

Generate exactly one task that you cannot complete for the following reason for infeasibility. \
The task must be infeasible because of this reason alone.

Reason for infeasibility: {reason_name}
Description: {reason_description}

ANALYSIS

Write the analysis after the line `ANALYSIS:` and then only the task instruction after the line `TASK:`. \
Do not explain why it is infeasible.";

const CLASSIFY_VANILLA: &str = "\
Attempt the task below. If you are able to complete it, answer it conclusively. \
If you are not able to complete it, do not attempt it; identify the single reason for \
infeasibility from this list that applies:

{reason_catalog}

VERDICT_FORMAT

Task:
{task_text}";

const CLASSIFY_CHALLENGE_QAP: &str = "\
CHALLENGE

Attempt the task below. If you are able to complete it, answer it conclusively. \
If you are not able to complete it, do not attempt it; identify the single reason for \
infeasibility from this list that applies:

{reason_catalog}

ANALYSIS

VERDICT_FORMAT

Task:
{task_text}";

fn default_body(kind: PromptKind, variant: PromptVariant) -> String {
    let raw = match (kind, variant) {
        (PromptKind::GenerateFeasible, PromptVariant::Vanilla) => GENERATE_FEASIBLE_VANILLA,
        (PromptKind::GenerateFeasible, PromptVariant::ChallengeQap) => {
            GENERATE_FEASIBLE_CHALLENGE_QAP
        }
        (PromptKind::GenerateInfeasible, PromptVariant::Vanilla) => GENERATE_INFEASIBLE_VANILLA,
        (PromptKind::GenerateInfeasible, PromptVariant::ChallengeQap) => {
            GENERATE_INFEASIBLE_CHALLENGE_QAP
        }
        (PromptKind::Classify, PromptVariant::Vanilla) => CLASSIFY_VANILLA,
        (PromptKind::Classify, PromptVariant::ChallengeQap) => CLASSIFY_CHALLENGE_QAP,
    };
    raw.replace("CHALLENGE", CHALLENGE_PREAMBLE)
        .replace("ANALYSIS\n", &format!("{ANALYSIS_INSTRUCTION}\n"))
        .replace("VERDICT_FORMAT", VERDICT_INSTRUCTIONS)
}
