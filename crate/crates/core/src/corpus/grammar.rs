//! Probabilistic template grammars.
//!
//! A grammar is a set of per-recipe-type template graphs. Nodes are step
//! templates (fixed tokens plus ingredient slots); edges carry branch
//! probabilities; `None` successors terminate the walk. Graphs must be
//! acyclic with every complete path between 2 and `max_t` steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{TokenRole, Vocab};

/// One position of a step template: a fixed vocabulary token, a slot filled
/// with any ingredient from the procedure's ingredient set, or a slot
/// restricted to one ingredient class (filled uniformly over the compatible
/// ingredients of the set).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternItem {
    Fixed(String),
    IngredientSlot,
    ClassSlot(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTemplate {
    pub action_id: String,
    pub pattern: Vec<PatternItem>,
}

impl StepTemplate {
    /// Parses a space-separated pattern: `@` marks an unrestricted
    /// ingredient slot, `@class` a class-restricted one:
    /// `parse("soup.season", "season with a pinch of @aroma")`.
    pub fn parse(action_id: &str, pattern: &str) -> Self {
        StepTemplate {
            action_id: action_id.to_string(),
            pattern: pattern
                .split_whitespace()
                .map(|w| {
                    if w == "@" {
                        PatternItem::IngredientSlot
                    } else if let Some(class) = w.strip_prefix('@') {
                        PatternItem::ClassSlot(class.to_string())
                    } else {
                        PatternItem::Fixed(w.to_string())
                    }
                })
                .collect(),
        }
    }

    /// Fixed surfaces of the pattern, slots skipped.
    pub fn fixed_surfaces(&self) -> Vec<&str> {
        self.pattern
            .iter()
            .filter_map(|p| match p {
                PatternItem::Fixed(s) => Some(s.as_str()),
                PatternItem::IngredientSlot | PatternItem::ClassSlot(_) => None,
            })
            .collect()
    }
}

/// Edge target: `Some(node)` continues the walk, `None` ends the procedure.
pub type Successor = (Option<usize>, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeTemplate {
    pub recipe_type: String,
    pub nodes: Vec<StepTemplate>,
    /// Distribution over entry nodes.
    pub start: Vec<(usize, f64)>,
    /// Per-node distribution over successors.
    pub next: Vec<Vec<Successor>>,
    /// Ingredient indices this recipe type draws from.
    pub ingredient_pool: Vec<usize>,
    /// Classes the ingredient set must cover: sampling includes exactly one
    /// pool ingredient of each (uniformly chosen), so class slots resolve to
    /// a definite mention.
    #[serde(default)]
    pub required_classes: Vec<String>,
    pub min_ingredients: usize,
    pub max_ingredients: usize,
}

/// A named branch point used by diversity probes: the path of action ids
/// leading to it from the start of its template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchProbe {
    pub name: String,
    pub prefix: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    pub vocab: Vocab,
    pub max_t: usize,
    pub max_step_len: usize,
    /// Class tag per ingredient index (length = V_ing); drives class slots.
    pub ingredient_classes: Vec<String>,
    pub templates: Vec<RecipeTemplate>,
    /// Prior over templates; positive, sums to 1.
    pub template_weights: Vec<f64>,
    pub branch_probes: Vec<BranchProbe>,
}

impl Grammar {
    /// Pool ingredients carrying a class tag.
    pub fn class_members<'g>(&'g self, pool: &'g [usize], class: &'g str) -> impl Iterator<Item = usize> + 'g {
        pool.iter()
            .copied()
            .filter(move |&i| self.ingredient_classes[i] == class)
    }
}

const PROB_TOL: f64 = 1e-9;

fn check_distribution(probs: &[f64], what: &str) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::data(format!("{what}: empty distribution")));
    }
    for &p in probs {
        if p <= 0.0 || p.is_nan() {
            return Err(Error::data(format!(
                "{what}: non-positive branch probability {p}"
            )));
        }
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::data(format!(
            "{what}: branch probabilities sum to {total}, expected 1"
        )));
    }
    Ok(())
}

impl Grammar {
    /// Validates every structural invariant, naming the offending branch
    /// point in the error.
    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::data("grammar has no templates"));
        }
        if self.templates.len() != self.template_weights.len() {
            return Err(Error::data("template weight count mismatch"));
        }
        if self.ingredient_classes.len() != self.vocab.v_ing() {
            return Err(Error::data(format!(
                "ingredient_classes has {} entries for {} ingredients",
                self.ingredient_classes.len(),
                self.vocab.v_ing()
            )));
        }
        if self.ingredient_classes.iter().any(|c| c.is_empty()) {
            return Err(Error::data("empty ingredient class tag"));
        }
        check_distribution(&self.template_weights, "template priors")?;

        for (ti, tpl) in self.templates.iter().enumerate() {
            let label = format!("template {ti} ('{}')", tpl.recipe_type);
            if tpl.nodes.is_empty() {
                return Err(Error::data(format!("{label}: no nodes")));
            }
            if tpl.next.len() != tpl.nodes.len() {
                return Err(Error::data(format!("{label}: next/nodes length mismatch")));
            }
            let start_probs: Vec<f64> = tpl.start.iter().map(|&(_, p)| p).collect();
            check_distribution(&start_probs, &format!("{label} start"))?;
            for &(node, _) in &tpl.start {
                if node >= tpl.nodes.len() {
                    return Err(Error::data(format!("{label}: start node {node} out of range")));
                }
            }
            for (ni, succs) in tpl.next.iter().enumerate() {
                let probs: Vec<f64> = succs.iter().map(|&(_, p)| p).collect();
                check_distribution(
                    &probs,
                    &format!("{label} branch point at node {ni} ('{}')", tpl.nodes[ni].action_id),
                )?;
                for &(succ, _) in succs {
                    if let Some(s) = succ {
                        if s >= tpl.nodes.len() {
                            return Err(Error::data(format!(
                                "{label}: node {ni} has successor {s} out of range"
                            )));
                        }
                    }
                }
            }
            self.check_acyclic(ti)?;
            self.check_path_lengths(ti)?;
            self.check_patterns(ti)?;
            if tpl.min_ingredients > tpl.max_ingredients
                || tpl.max_ingredients > tpl.ingredient_pool.len().max(tpl.min_ingredients)
            {
                return Err(Error::data(format!("{label}: bad ingredient count range")));
            }
            for &ing in &tpl.ingredient_pool {
                if ing >= self.vocab.v_ing() {
                    return Err(Error::data(format!(
                        "{label}: pool ingredient {ing} out of range"
                    )));
                }
            }
            for class in &tpl.required_classes {
                if self.class_members(&tpl.ingredient_pool, class).next().is_none() {
                    return Err(Error::data(format!(
                        "{label}: required class '{class}' has no pool member"
                    )));
                }
            }
            if tpl.min_ingredients < tpl.required_classes.len() {
                return Err(Error::data(format!(
                    "{label}: min_ingredients below the required class count"
                )));
            }
        }

        // Action ids are unique within a template. Across templates they may
        // recur (that is how templates share a prefix), but only with an
        // identical pattern, so an action id always means one surface form.
        let mut seen: std::collections::HashMap<&str, &[PatternItem]> =
            std::collections::HashMap::new();
        for tpl in &self.templates {
            let mut local = std::collections::HashSet::new();
            for node in &tpl.nodes {
                if !local.insert(node.action_id.as_str()) {
                    return Err(Error::data(format!(
                        "template '{}': duplicate action id '{}'",
                        tpl.recipe_type, node.action_id
                    )));
                }
                match seen.get(node.action_id.as_str()) {
                    Some(pattern) if *pattern != node.pattern.as_slice() => {
                        return Err(Error::data(format!(
                            "action id '{}' reused with a different pattern",
                            node.action_id
                        )));
                    }
                    _ => {
                        seen.insert(&node.action_id, &node.pattern);
                    }
                }
            }
        }
        Ok(())
    }

    fn check_acyclic(&self, ti: usize) -> Result<()> {
        let tpl = &self.templates[ti];
        // DFS colors: 0 unvisited, 1 on stack, 2 done.
        let mut color = vec![0u8; tpl.nodes.len()];
        fn visit(tpl: &RecipeTemplate, node: usize, color: &mut [u8]) -> Result<()> {
            color[node] = 1;
            for &(succ, _) in &tpl.next[node] {
                if let Some(s) = succ {
                    match color[s] {
                        0 => visit(tpl, s, color)?,
                        1 => {
                            return Err(Error::data(format!(
                                "template '{}': cycle through node {s} ('{}')",
                                tpl.recipe_type, tpl.nodes[s].action_id
                            )))
                        }
                        _ => {}
                    }
                }
            }
            color[node] = 2;
            Ok(())
        }
        for &(start, _) in &tpl.start {
            if color[start] == 0 {
                visit(tpl, start, &mut color)?;
            }
        }
        Ok(())
    }

    fn check_path_lengths(&self, ti: usize) -> Result<()> {
        let tpl = &self.templates[ti];
        // Longest and shortest complete path from each node, memoized.
        // Acyclicity was established above so recursion terminates.
        fn bounds(
            tpl: &RecipeTemplate,
            node: usize,
            memo: &mut [Option<(usize, usize)>],
        ) -> (usize, usize) {
            if let Some(b) = memo[node] {
                return b;
            }
            let mut min_rest = usize::MAX;
            let mut max_rest = 0usize;
            for &(succ, _) in &tpl.next[node] {
                let (lo, hi) = match succ {
                    None => (0, 0),
                    Some(s) => bounds(tpl, s, memo),
                };
                min_rest = min_rest.min(lo);
                max_rest = max_rest.max(hi);
            }
            let b = (1 + min_rest, 1 + max_rest);
            memo[node] = Some(b);
            b
        }
        let mut memo = vec![None; tpl.nodes.len()];
        for &(start, _) in &tpl.start {
            let (lo, hi) = bounds(tpl, start, &mut memo);
            if hi > self.max_t {
                return Err(Error::data(format!(
                    "template '{}': a path of {hi} steps exceeds max_t {}",
                    tpl.recipe_type, self.max_t
                )));
            }
            if lo < 2 {
                return Err(Error::data(format!(
                    "template '{}': a complete path of {lo} step(s) exists; procedures need T >= 2",
                    tpl.recipe_type
                )));
            }
        }
        Ok(())
    }

    fn check_patterns(&self, ti: usize) -> Result<()> {
        let tpl = &self.templates[ti];
        for node in &tpl.nodes {
            if node.pattern.is_empty() || node.pattern.len() > self.max_step_len {
                return Err(Error::data(format!(
                    "action '{}': pattern length {} outside 1..={}",
                    node.action_id,
                    node.pattern.len(),
                    self.max_step_len
                )));
            }
            let mut slots = 0usize;
            for item in &node.pattern {
                match item {
                    PatternItem::Fixed(surface) => {
                        let id = self.vocab.lookup(surface).ok_or_else(|| {
                            Error::data(format!(
                                "action '{}': unknown token '{surface}'",
                                node.action_id
                            ))
                        })?;
                        let role = self.vocab.role(id);
                        if role.is_special() {
                            return Err(Error::data(format!(
                                "action '{}': reserved token '{surface}' in pattern",
                            node.action_id
                            )));
                        }
                        if role == TokenRole::Ingredient {
                            return Err(Error::data(format!(
                                "action '{}': fixed ingredient '{surface}' would escape the \
                                 ingredient set; use a slot",
                                node.action_id
                            )));
                        }
                    }
                    PatternItem::IngredientSlot => slots += 1,
                    PatternItem::ClassSlot(class) => {
                        slots += 1;
                        if self.class_members(&tpl.ingredient_pool, class).next().is_none() {
                            return Err(Error::data(format!(
                                "action '{}': slot class '{class}' has no pool member",
                                node.action_id
                            )));
                        }
                    }
                }
            }
            if slots > 0 && tpl.min_ingredients == 0 {
                return Err(Error::data(format!(
                    "action '{}': has slots but the template allows empty ingredient sets",
                    node.action_id
                )));
            }
        }
        Ok(())
    }

    /// All step templates across templates, in canonical order.
    pub fn all_actions(&self) -> Vec<&StepTemplate> {
        self.templates.iter().flat_map(|t| t.nodes.iter()).collect()
    }

    pub fn find_action(&self, action_id: &str) -> Option<&StepTemplate> {
        self.all_actions()
            .into_iter()
            .find(|a| a.action_id == action_id)
    }

    pub fn recipe_types(&self) -> Vec<&str> {
        let mut types: Vec<&str> = self
            .templates
            .iter()
            .map(|t| t.recipe_type.as_str())
            .collect();
        types.dedup();
        types
    }

    /// Restriction to a subset of recipe types, with template priors
    /// renormalized. Used to carve seen/unseen corpora out of one grammar.
    pub fn restricted_to(&self, keep: impl Fn(&str) -> bool) -> Result<Grammar> {
        let mut templates = Vec::new();
        let mut weights = Vec::new();
        for (tpl, &w) in self.templates.iter().zip(&self.template_weights) {
            if keep(&tpl.recipe_type) {
                templates.push(tpl.clone());
                weights.push(w);
            }
        }
        if templates.is_empty() {
            return Err(Error::data("type restriction removes every template"));
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let kept_types: std::collections::HashSet<String> = templates
            .iter()
            .map(|t| t.recipe_type.clone())
            .collect();
        Ok(Grammar {
            vocab: self.vocab.clone(),
            max_t: self.max_t,
            max_step_len: self.max_step_len,
            ingredient_classes: self.ingredient_classes.clone(),
            templates,
            template_weights: weights,
            branch_probes: self
                .branch_probes
                .iter()
                .filter(|p| {
                    // Keep probes whose prefix still matches a kept template.
                    self.templates.iter().any(|t| {
                        kept_types.contains(&t.recipe_type)
                            && t.nodes.iter().any(|n| n.action_id == p.prefix[0])
                    })
                })
                .cloned()
                .collect(),
        })
    }
}
