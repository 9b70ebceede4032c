//! Corpus sampling.
//!
//! `generate_corpus` is a pure function of (grammar, n, seed): each
//! procedure's randomness is derived from `(seed, procedure_index)`, so
//! corpora are reproducible and procedures could be sampled independently.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use crate::error::Result;
use crate::rng::Prng;

use super::{Grammar, PatternItem, Procedure, RecipeTemplate, Step};

pub fn generate_corpus(grammar: &Grammar, n: usize, seed: u64) -> Result<Vec<Procedure>> {
    grammar.validate()?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = Prng::derive(seed, &[i as u64]);
        out.push(sample_procedure(grammar, &mut rng));
    }
    Ok(out)
}

fn sample_procedure(grammar: &Grammar, rng: &mut Prng) -> Procedure {
    let ti = rng.weighted(&grammar.template_weights);
    let tpl = &grammar.templates[ti];
    let ingredients = sample_ingredients(grammar, tpl, rng);
    let ing_list: Vec<usize> = ingredients.iter().copied().collect();

    let mut steps = Vec::new();
    let start_probs: Vec<f64> = tpl.start.iter().map(|&(_, p)| p).collect();
    let mut node = tpl.start[rng.weighted(&start_probs)].0;
    loop {
        steps.push(realize_step(grammar, tpl, node, &ing_list, rng));
        debug_assert!(steps.len() <= grammar.max_t, "validated grammar overran max_t");
        let succs = &tpl.next[node];
        let probs: Vec<f64> = succs.iter().map(|&(_, p)| p).collect();
        match succs[rng.weighted(&probs)].0 {
            Some(next) => node = next,
            None => break,
        }
    }

    Procedure {
        recipe_type: tpl.recipe_type.clone(),
        ingredients,
        steps,
    }
}

/// Samples an ingredient set: exactly one pool member of each required
/// class (uniformly), then random extras up to the size range.
pub fn sample_ingredients(
    grammar: &Grammar,
    tpl: &RecipeTemplate,
    rng: &mut Prng,
) -> BTreeSet<usize> {
    let mut set = BTreeSet::new();
    for class in &tpl.required_classes {
        let members: Vec<usize> = grammar
            .class_members(&tpl.ingredient_pool, class)
            .filter(|i| !set.contains(i))
            .collect();
        if !members.is_empty() {
            set.insert(members[rng.below(members.len())]);
        }
    }
    let span = tpl.max_ingredients - tpl.min_ingredients;
    let count = tpl.min_ingredients + if span > 0 { rng.below(span + 1) } else { 0 };
    let count = count.min(tpl.ingredient_pool.len()).max(set.len());
    let mut extras: Vec<usize> = tpl
        .ingredient_pool
        .iter()
        .copied()
        .filter(|i| !set.contains(i))
        .collect();
    rng.shuffle(&mut extras);
    for extra in extras {
        if set.len() >= count {
            break;
        }
        set.insert(extra);
    }
    set
}

/// Realizes one step template against an ingredient set. Class slots draw
/// uniformly from the compatible ingredients of the set (the whole set when
/// no member matches); repeats within one step are avoided while possible.
pub fn realize_step(
    grammar: &Grammar,
    tpl: &RecipeTemplate,
    node: usize,
    ingredients: &[usize],
    rng: &mut Prng,
) -> Step {
    let template = &tpl.nodes[node];
    let mut used: Vec<usize> = Vec::new();
    let tokens = template
        .pattern
        .iter()
        .map(|item| {
            let class = match item {
                PatternItem::Fixed(surface) => {
                    return grammar
                        .vocab
                        .lookup(surface)
                        .expect("validated grammar token");
                }
                PatternItem::IngredientSlot => None,
                PatternItem::ClassSlot(class) => Some(class.as_str()),
            };
            let compatible: Vec<usize> = ingredients
                .iter()
                .copied()
                .filter(|&i| class.map(|c| grammar.ingredient_classes[i] == c).unwrap_or(true))
                .collect();
            let pool = if compatible.is_empty() {
                ingredients.to_vec()
            } else {
                compatible
            };
            let fresh: Vec<usize> = pool.iter().copied().filter(|i| !used.contains(i)).collect();
            let choice = if fresh.is_empty() {
                pool[rng.below(pool.len())]
            } else {
                fresh[rng.below(fresh.len())]
            };
            used.push(choice);
            grammar
                .vocab
                .ingredient_token(choice)
                .expect("pool ingredient in range")
        })
        .collect();
    Step {
        tokens,
        action_id: template.action_id.clone(),
    }
}

/// Empirical distribution of the next action over procedures whose initial
/// action path equals `prefix`. Counterpart of the exact oracle.
pub fn empirical_next_distribution(
    corpus: &[Procedure],
    prefix: &[String],
) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    for proc in corpus {
        if proc.steps.len() <= prefix.len() {
            continue;
        }
        let matches = proc
            .steps
            .iter()
            .zip(prefix)
            .all(|(s, p)| &s.action_id == p);
        if matches {
            *counts
                .entry(proc.steps[prefix.len()].action_id.clone())
                .or_default() += 1;
            total += 1;
        }
    }
    counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / total.max(1) as f64))
        .collect()
}

/// Total-variation distance between two distributions given as maps.
pub fn total_variation(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> f64 {
    let keys: BTreeSet<&String> = p.keys().chain(q.keys()).collect();
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).unwrap_or(&0.0) - q.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}
