//! Corpus and grammar files.
//!
//! Corpora are UTF-8 line-delimited JSON records; a record carries
//! `recipe_type`, `ingredients` (integer array) and `steps` (objects with
//! `tokens` as surface strings and `action_id`). Grammars are single JSON
//! documents. Reading validates everything it can and reports the offending
//! line or token.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::grammar::{BranchProbe, RecipeTemplate};
use crate::corpus::{Grammar, Procedure, Step, TokenInfo, Vocab};

#[derive(Serialize, Deserialize)]
struct StepRecord {
    tokens: Vec<String>,
    action_id: String,
}

#[derive(Serialize, Deserialize)]
struct ProcedureRecord {
    recipe_type: String,
    ingredients: Vec<usize>,
    steps: Vec<StepRecord>,
}

pub fn write_corpus(path: &Path, procedures: &[Procedure], vocab: &Vocab) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for proc in procedures {
        let record = ProcedureRecord {
            recipe_type: proc.recipe_type.clone(),
            ingredients: proc.ingredients.iter().copied().collect(),
            steps: proc
                .steps
                .iter()
                .map(|s| StepRecord {
                    tokens: s.tokens.iter().map(|&t| vocab.surface(t).to_string()).collect(),
                    action_id: s.action_id.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus(path: &Path, vocab: &Vocab, max_t: usize) -> Result<Vec<Procedure>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let proc = procedure_from_json(&line, vocab, max_t)
            .map_err(|e| Error::data(format!("line {}: {e}", lineno + 1)))?;
        out.push(proc);
    }
    Ok(out)
}

/// Parses one corpus record (a single JSON line) against a vocabulary.
pub fn procedure_from_json(json: &str, vocab: &Vocab, max_t: usize) -> Result<Procedure> {
    let record: ProcedureRecord =
        serde_json::from_str(json).map_err(|e| Error::data(format!("malformed record: {e}")))?;
    let mut steps = Vec::with_capacity(record.steps.len());
    for s in &record.steps {
        let tokens = s
            .tokens
            .iter()
            .map(|surface| {
                vocab
                    .lookup(surface)
                    .ok_or_else(|| Error::data(format!("unknown token '{surface}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        steps.push(Step {
            tokens,
            action_id: s.action_id.clone(),
        });
    }
    let proc = Procedure {
        recipe_type: record.recipe_type,
        ingredients: record.ingredients.into_iter().collect(),
        steps,
    };
    proc.validate(vocab, max_t)?;
    Ok(proc)
}

/// Serialization shape of a grammar document.
#[derive(Serialize, Deserialize)]
struct GrammarDoc {
    vocab: Vec<TokenInfo>,
    max_t: usize,
    max_step_len: usize,
    #[serde(default)]
    ingredient_classes: Vec<String>,
    templates: Vec<RecipeTemplate>,
    template_weights: Vec<f64>,
    #[serde(default)]
    branch_probes: Vec<BranchProbe>,
}

impl GrammarDoc {
    fn from_grammar(grammar: &Grammar) -> Self {
        GrammarDoc {
            vocab: grammar
                .vocab
                .entries()
                .iter()
                .filter(|t| !t.role.is_special())
                .cloned()
                .collect(),
            max_t: grammar.max_t,
            max_step_len: grammar.max_step_len,
            ingredient_classes: grammar.ingredient_classes.clone(),
            templates: grammar.templates.clone(),
            template_weights: grammar.template_weights.clone(),
            branch_probes: grammar.branch_probes.clone(),
        }
    }

    fn into_grammar(self) -> Result<Grammar> {
        let entries: Vec<(String, super::TokenRole)> = self
            .vocab
            .iter()
            .map(|t| (t.surface.clone(), t.role))
            .collect();
        let grammar = Grammar {
            vocab: Vocab::new(&entries)?,
            max_t: self.max_t,
            max_step_len: self.max_step_len,
            ingredient_classes: self.ingredient_classes,
            templates: self.templates,
            template_weights: self.template_weights,
            branch_probes: self.branch_probes,
        };
        grammar.validate()?;
        Ok(grammar)
    }
}

impl Serialize for Grammar {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GrammarDoc::from_grammar(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Grammar {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = GrammarDoc::deserialize(d)?;
        doc.into_grammar().map_err(serde::de::Error::custom)
    }
}

pub fn write_grammar(path: &Path, grammar: &Grammar) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &GrammarDoc::from_grammar(grammar))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_grammar(path: &Path) -> Result<Grammar> {
    let reader = BufReader::new(File::open(path)?);
    let doc: GrammarDoc = serde_json::from_reader(reader)?;
    doc.into_grammar()
}
