//! Editable prompt templates.
//!
//! A template file holds the system prompt, optionally followed by a line
//! `<<<USER>>>` and the user-message text. Placeholders `{n}`,
//! `{class_list}`, `{descriptions}` and `{prompt}` are substituted at
//! render time.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::PromptPaths;
use crate::error::ConfigError;
use crate::types::Method;

pub const USER_SEPARATOR: &str = "<<<USER>>>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TemplateName {
    Outliner,
    Aspect,
    Reasoning,
    Direct,
    Cot,
    Savr,
}

impl TemplateName {
    pub const ALL: [TemplateName; 6] = [
        TemplateName::Outliner,
        TemplateName::Aspect,
        TemplateName::Reasoning,
        TemplateName::Direct,
        TemplateName::Cot,
        TemplateName::Savr,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateName::Outliner => "outliner.txt",
            TemplateName::Aspect => "aspect.txt",
            TemplateName::Reasoning => "reasoning.txt",
            TemplateName::Direct => "direct.txt",
            TemplateName::Cot => "cot.txt",
            TemplateName::Savr => "savr.txt",
        }
    }

    fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateName::Outliner => &["{n}"],
            TemplateName::Aspect => &["{prompt}"],
            TemplateName::Reasoning => &["{class_list}", "{descriptions}"],
            TemplateName::Direct | TemplateName::Cot | TemplateName::Savr => &["{class_list}"],
        }
    }

    /// Templates a method sends.
    pub fn for_method(method: Method) -> &'static [TemplateName] {
        match method {
            Method::Maric => &[TemplateName::Outliner, TemplateName::Aspect, TemplateName::Reasoning],
            Method::MaricNoAspects => &[TemplateName::Outliner, TemplateName::Reasoning],
            Method::Direct => &[TemplateName::Direct],
            Method::Cot => &[TemplateName::Cot],
            Method::Savr => &[TemplateName::Savr],
        }
    }

    fn builtin_text(self) -> &'static str {
        match self {
            TemplateName::Outliner => include_str!("../../../prompts/outliner.txt"),
            TemplateName::Aspect => include_str!("../../../prompts/aspect.txt"),
            TemplateName::Reasoning => include_str!("../../../prompts/reasoning.txt"),
            TemplateName::Direct => include_str!("../../../prompts/direct.txt"),
            TemplateName::Cot => include_str!("../../../prompts/cot.txt"),
            TemplateName::Savr => include_str!("../../../prompts/savr.txt"),
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_name().trim_end_matches(".txt"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub source: String,
    pub system: String,
    pub user: String,
}

impl Template {
    pub fn parse(name: TemplateName, source: &str) -> Result<Self, ConfigError> {
        for ph in name.required_placeholders() {
            if !source.contains(ph) {
                return Err(ConfigError::MissingPlaceholder {
                    name: name.to_string(),
                    placeholder: ph.to_string(),
                });
            }
        }
        let (system, user) = match source.split_once(&format!("\n{USER_SEPARATOR}")) {
            Some((sys, user)) => (sys, user),
            None => (source, ""),
        };
        Ok(Self {
            source: source.to_string(),
            system: system.trim().to_string(),
            user: user.trim().to_string(),
        })
    }
}

/// Values substituted into a template.
#[derive(Debug, Default, Clone)]
pub struct Vars<'a> {
    pub n: Option<usize>,
    pub class_list: Option<&'a str>,
    pub descriptions: Option<&'a str>,
    pub prompt: Option<&'a str>,
}

fn substitute(text: &str, vars: &Vars<'_>) -> String {
    let mut out = text.to_string();
    if let Some(n) = vars.n {
        out = out.replace("{n}", &n.to_string());
    }
    for (key, value) in [
        ("{class_list}", vars.class_list),
        ("{descriptions}", vars.descriptions),
        ("{prompt}", vars.prompt),
    ] {
        if let Some(v) = value {
            out = out.replace(key, v);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: BTreeMap<TemplateName, Template>,
}

impl PromptSet {
    /// Templates compiled from the repository's `prompts/` directory.
    pub fn builtin() -> Self {
        let templates = TemplateName::ALL
            .iter()
            .map(|&n| (n, Template::parse(n, n.builtin_text()).expect("builtin template valid")))
            .collect();
        Self { templates }
    }

    /// Loads the templates a method needs from disk; a missing file is a
    /// configuration error.
    pub fn load(method: Method, dir: &Path, overrides: &PromptPaths) -> Result<Self, ConfigError> {
        let mut templates = BTreeMap::new();
        for &name in TemplateName::for_method(method) {
            let path = override_path(name, overrides).unwrap_or_else(|| dir.join(name.file_name()));
            let source = std::fs::read_to_string(&path).map_err(|_| ConfigError::MissingTemplate {
                name: name.to_string(),
                path: path.clone(),
            })?;
            templates.insert(name, Template::parse(name, &source)?);
        }
        Ok(Self { templates })
    }

    pub fn get(&self, name: TemplateName) -> Option<&Template> {
        self.templates.get(&name)
    }

    pub fn render(&self, name: TemplateName, vars: &Vars<'_>) -> Result<RenderedPrompt, ConfigError> {
        let t = self.get(name).ok_or_else(|| ConfigError::MissingTemplate {
            name: name.to_string(),
            path: PathBuf::from(name.file_name()),
        })?;
        Ok(RenderedPrompt {
            system: substitute(&t.system, vars),
            user: substitute(&t.user, vars),
        })
    }

    /// Digest over every template a method uses, part of the cache key.
    pub fn hash_for(&self, method: Method) -> String {
        let mut h = Sha256::new();
        for name in TemplateName::for_method(method) {
            h.update(name.file_name().as_bytes());
            h.update([0]);
            if let Some(t) = self.templates.get(name) {
                h.update(t.source.as_bytes());
            }
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

fn override_path(name: TemplateName, p: &PromptPaths) -> Option<PathBuf> {
    match name {
        TemplateName::Outliner => p.outliner.clone(),
        TemplateName::Aspect => p.aspect.clone(),
        TemplateName::Reasoning => p.reasoning.clone(),
        TemplateName::Direct => p.direct.clone(),
        TemplateName::Cot => p.cot.clone(),
        TemplateName::Savr => p.savr.clone(),
    }
}
