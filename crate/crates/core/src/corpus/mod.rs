//! Synthetic procedural corpora.
//!
//! Procedures are sampled from probabilistic template graphs whose branch
//! distributions are known exactly, so every distributional claim about the
//! models can be checked against a brute-force oracle
//! ([`oracle::next_action_distribution`]).

mod desk;
mod generate;
mod grammar;
mod io;
mod oracle;
pub mod samples;

pub use desk::{desk_grammar, desk_unseen_types, DESK_PROBE};
pub use generate::{empirical_next_distribution, generate_corpus, realize_step, sample_ingredients, total_variation};
pub use grammar::{BranchProbe, Grammar, PatternItem, RecipeTemplate, StepTemplate};
pub use io::{procedure_from_json, read_corpus, read_grammar, write_corpus, write_grammar};
pub use oracle::next_action_distribution;

use std::collections::BTreeSet;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenRole {
    Verb,
    Ingredient,
    Other,
    Bos,
    Eos,
    Pad,
}

impl TokenRole {
    pub fn is_special(self) -> bool {
        matches!(self, TokenRole::Bos | TokenRole::Eos | TokenRole::Pad)
    }
}

/// A vocabulary entry; roles are fixed at vocabulary construction so the
/// recall metrics need no tagger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenInfo {
    pub surface: String,
    pub role: TokenRole,
}

pub const BOS_SURFACE: &str = "<bos>";
pub const EOS_SURFACE: &str = "<eos>";
pub const PAD_SURFACE: &str = "<pad>";

/// Token table with reserved specials and an index from ingredient slot
/// number to its vocabulary id.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<TokenInfo>,
    by_surface: HashMap<String, TokenId>,
    /// ingredient index (0..v_ing) -> token id
    ingredient_tokens: Vec<TokenId>,
    pub bos: TokenId,
    pub eos: TokenId,
    pub pad: TokenId,
}

impl Vocab {
    /// Builds a vocabulary from `(surface, role)` pairs. Specials are added
    /// first; ingredient ids are assigned in the order their surfaces appear.
    pub fn new(entries: &[(String, TokenRole)]) -> Result<Self> {
        let mut tokens = Vec::with_capacity(entries.len() + 3);
        for (surface, role) in [
            (BOS_SURFACE, TokenRole::Bos),
            (EOS_SURFACE, TokenRole::Eos),
            (PAD_SURFACE, TokenRole::Pad),
        ] {
            tokens.push(TokenInfo {
                surface: surface.to_string(),
                role,
            });
        }
        for (surface, role) in entries {
            if surface.is_empty() {
                return Err(Error::data("empty token surface"));
            }
            if role.is_special() {
                return Err(Error::data(format!(
                    "surface '{surface}' claims a reserved special role"
                )));
            }
            if surface == BOS_SURFACE || surface == EOS_SURFACE || surface == PAD_SURFACE {
                return Err(Error::data(format!(
                    "surface '{surface}' collides with a reserved special"
                )));
            }
            tokens.push(TokenInfo {
                surface: surface.clone(),
                role: *role,
            });
        }
        let mut by_surface = HashMap::new();
        for (id, info) in tokens.iter().enumerate() {
            if by_surface.insert(info.surface.clone(), id as TokenId).is_some() {
                return Err(Error::data(format!(
                    "duplicate token surface '{}'",
                    info.surface
                )));
            }
        }
        let ingredient_tokens: Vec<TokenId> = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.role == TokenRole::Ingredient)
            .map(|(i, _)| i as TokenId)
            .collect();
        Ok(Vocab {
            tokens,
            by_surface,
            ingredient_tokens,
            bos: 0,
            eos: 1,
            pad: 2,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn info(&self, id: TokenId) -> &TokenInfo {
        &self.tokens[id as usize]
    }

    pub fn surface(&self, id: TokenId) -> &str {
        &self.tokens[id as usize].surface
    }

    pub fn role(&self, id: TokenId) -> TokenRole {
        self.tokens[id as usize].role
    }

    pub fn lookup(&self, surface: &str) -> Option<TokenId> {
        self.by_surface.get(surface).copied()
    }

    /// Number of distinct ingredient tokens (the ingredient vocabulary size).
    pub fn v_ing(&self) -> usize {
        self.ingredient_tokens.len()
    }

    /// Token id for ingredient index `i`.
    pub fn ingredient_token(&self, i: usize) -> Option<TokenId> {
        self.ingredient_tokens.get(i).copied()
    }

    /// Ingredient index of a token, if it has the ingredient role.
    pub fn ingredient_index(&self, id: TokenId) -> Option<usize> {
        self.ingredient_tokens.iter().position(|&t| t == id)
    }

    pub fn entries(&self) -> &[TokenInfo] {
        &self.tokens
    }

    pub fn render(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.surface(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// One procedure step: a token sequence plus the grammar production that
/// emitted it. `action_id` is oracle/probe metadata, never model input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub tokens: Vec<TokenId>,
    pub action_id: String,
}

/// An ordered list of steps plus the ingredient set used as the 0-th step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Procedure {
    pub recipe_type: String,
    pub ingredients: BTreeSet<usize>,
    pub steps: Vec<Step>,
}

impl Procedure {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn action_ids(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.action_id.as_str()).collect()
    }

    /// Checks the structural invariants against a vocabulary.
    pub fn validate(&self, vocab: &Vocab, max_t: usize) -> Result<()> {
        if self.steps.len() < 2 {
            return Err(Error::data(format!(
                "procedure of type '{}' has {} steps; need at least 2",
                self.recipe_type,
                self.steps.len()
            )));
        }
        if self.steps.len() > max_t {
            return Err(Error::data(format!(
                "procedure of type '{}' has {} steps; max is {max_t}",
                self.recipe_type,
                self.steps.len()
            )));
        }
        for step in &self.steps {
            if step.tokens.is_empty() {
                return Err(Error::data("empty step"));
            }
            for &tok in &step.tokens {
                let info = self.check_token(vocab, tok)?;
                if info.role == TokenRole::Ingredient {
                    let idx = vocab.ingredient_index(tok).expect("role checked");
                    if !self.ingredients.contains(&idx) {
                        return Err(Error::data(format!(
                            "step mentions ingredient '{}' missing from the ingredient set",
                            info.surface
                        )));
                    }
                }
            }
        }
        for &ing in &self.ingredients {
            if ing >= vocab.v_ing() {
                return Err(Error::data(format!(
                    "ingredient index {ing} out of range (V_ing = {})",
                    vocab.v_ing()
                )));
            }
        }
        Ok(())
    }

    fn check_token<'v>(&self, vocab: &'v Vocab, tok: TokenId) -> Result<&'v TokenInfo> {
        if (tok as usize) >= vocab.len() {
            return Err(Error::data(format!("token id {tok} out of vocabulary")));
        }
        let info = vocab.info(tok);
        if info.role.is_special() {
            return Err(Error::data(format!(
                "reserved token '{}' inside a step",
                info.surface
            )));
        }
        Ok(info)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_rejects_duplicates_and_specials() {
        let dup = vec![
            ("add".to_string(), TokenRole::Verb),
            ("add".to_string(), TokenRole::Other),
        ];
        assert!(Vocab::new(&dup).is_err());
        let clash = vec![("<bos>".to_string(), TokenRole::Other)];
        assert!(Vocab::new(&clash).is_err());
    }

    #[test]
    fn ingredient_indices_round_trip() {
        let v = Vocab::new(&[
            ("add".to_string(), TokenRole::Verb),
            ("salt".to_string(), TokenRole::Ingredient),
            ("pepper".to_string(), TokenRole::Ingredient),
        ])
        .unwrap();
        assert_eq!(v.v_ing(), 2);
        let salt = v.lookup("salt").unwrap();
        assert_eq!(v.ingredient_index(salt), Some(0));
        assert_eq!(v.ingredient_token(1), v.lookup("pepper"));
    }
}
