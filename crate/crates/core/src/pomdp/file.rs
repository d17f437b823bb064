//! TOML model files.
//!
//! ```toml
//! discount = 0.95
//! states = ["left", "right"]
//! actions = ["listen", "open"]
//! observations = ["hear-left", "hear-right"]
//! initial = { left = 0.5, right = 0.5 }   # optional, uniform otherwise
//!
//! [[transition]]
//! from = "left"          # "*" expands to every state
//! action = "*"           # "*" expands to every action
//! to = { left = 1.0 }
//!
//! [[observation]]
//! state = "left"         # successor state s'
//! action = "*"
//! probs = { hear-left = 0.85, hear-right = 0.15 }
//!
//! [[reward]]
//! state = "*"
//! action = "listen"
//! value = -1.0
//! ```
//!
//! Later blocks add to earlier ones for transitions and observations; a later
//! reward block overwrites the value.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use toml::Spanned;

use super::{ModelError, PomdpBuilder, PomdpModel};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    discount: Option<f64>,
    states: Vec<String>,
    actions: Vec<String>,
    observations: Vec<String>,
    initial: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    transition: Vec<TransitionBlock>,
    #[serde(default)]
    observation: Vec<ObservationBlock>,
    #[serde(default)]
    reward: Vec<RewardBlock>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionBlock {
    from: Spanned<String>,
    action: Spanned<String>,
    to: Spanned<BTreeMap<String, f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationBlock {
    state: Spanned<String>,
    action: Spanned<String>,
    probs: Spanned<BTreeMap<String, f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardBlock {
    state: Spanned<String>,
    action: Spanned<String>,
    value: f64,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

struct Names<'a> {
    text: &'a str,
    kind: &'static str,
    names: &'a [String],
}

impl Names<'_> {
    fn one(&self, name: &str, offset: usize) -> Result<usize, ModelError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| ModelError::Parse {
                line: line_of(self.text, offset),
                message: format!("unknown {} '{name}'", self.kind),
            })
    }

    fn expand(&self, spanned: &Spanned<String>) -> Result<Vec<usize>, ModelError> {
        if spanned.get_ref() == "*" {
            Ok((0..self.names.len()).collect())
        } else {
            Ok(vec![self.one(spanned.get_ref(), spanned.span().start)?])
        }
    }
}

/// Parses a model from TOML text.
pub fn parse_model(text: &str) -> Result<PomdpModel, ModelError> {
    let file: ModelFile = toml::from_str(text).map_err(|e| ModelError::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().to_string(),
    })?;
    let states = Names {
        text,
        kind: "state",
        names: &file.states,
    };
    let actions = Names {
        text,
        kind: "action",
        names: &file.actions,
    };
    let observations = Names {
        text,
        kind: "observation",
        names: &file.observations,
    };

    let mut b = PomdpBuilder::new(
        file.states.clone(),
        file.actions.clone(),
        file.observations.clone(),
    );
    if let Some(g) = file.discount {
        b.discount(g);
    }
    for block in &file.transition {
        let at = block.to.span().start;
        for s in states.expand(&block.from)? {
            for a in actions.expand(&block.action)? {
                for (name, &p) in block.to.get_ref() {
                    b.transition(s, a, states.one(name, at)?, p);
                }
            }
        }
    }
    for block in &file.observation {
        let at = block.probs.span().start;
        for s in states.expand(&block.state)? {
            for a in actions.expand(&block.action)? {
                for (name, &p) in block.probs.get_ref() {
                    b.observation(s, a, observations.one(name, at)?, p);
                }
            }
        }
    }
    for block in &file.reward {
        for s in states.expand(&block.state)? {
            for a in actions.expand(&block.action)? {
                b.reward(s, a, block.value);
            }
        }
    }
    if let Some(initial) = &file.initial {
        let weights = initial
            .iter()
            .map(|(name, &w)| states.one(name, 0).map(|s| (s, w)))
            .collect::<Result<Vec<_>, _>>()?;
        b.initial(weights);
    }
    b.build()
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PomdpModel, ModelError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| ModelError::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_model(&text)
}
