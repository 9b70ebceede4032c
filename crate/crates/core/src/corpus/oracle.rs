//! Exact next-action distributions by brute-force path enumeration.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{Grammar, RecipeTemplate};

/// Exact conditional distribution of the next action given that a procedure
/// starts with `prefix` and continues (walks that end immediately after the
/// prefix are excluded, since an anticipation context always has a next
/// step). Enumerates every path of every template; probabilities over the
/// returned support sum to 1 within 1e-9.
pub fn next_action_distribution(
    grammar: &Grammar,
    prefix: &[String],
) -> Result<BTreeMap<String, f64>> {
    if prefix.is_empty() {
        return Err(Error::usage("oracle prefix must be non-empty"));
    }
    let mut weights: BTreeMap<String, f64> = BTreeMap::new();
    let mut prefix_mass = 0.0;
    for (tpl, &prior) in grammar.templates.iter().zip(&grammar.template_weights) {
        for (end_node, path_prob) in paths_matching(tpl, prefix) {
            prefix_mass += prior * path_prob;
            for &(succ, p) in &tpl.next[end_node] {
                if let Some(s) = succ {
                    *weights
                        .entry(tpl.nodes[s].action_id.clone())
                        .or_default() += prior * path_prob * p;
                }
            }
        }
    }
    if prefix_mass == 0.0 {
        return Err(Error::data(format!(
            "prefix [{}] does not match any template path",
            prefix.join(", ")
        )));
    }
    let total: f64 = weights.values().sum();
    if total == 0.0 {
        return Err(Error::data(format!(
            "prefix [{}] always terminates; no next step exists",
            prefix.join(", ")
        )));
    }
    for w in weights.values_mut() {
        *w /= total;
    }
    debug_assert!((weights.values().sum::<f64>() - 1.0).abs() < 1e-9);
    Ok(weights)
}

/// All nodes a walk can be at after emitting exactly `prefix`, with the
/// probability of each such path (start prob times branch probs).
fn paths_matching(tpl: &RecipeTemplate, prefix: &[String]) -> Vec<(usize, f64)> {
    let mut frontier: Vec<(usize, f64)> = tpl
        .start
        .iter()
        .filter(|(node, _)| tpl.nodes[*node].action_id == prefix[0])
        .map(|&(node, p)| (node, p))
        .collect();
    for want in &prefix[1..] {
        let mut next_frontier = Vec::new();
        for &(node, prob) in &frontier {
            for &(succ, p) in &tpl.next[node] {
                if let Some(s) = succ {
                    if &tpl.nodes[s].action_id == want {
                        next_frontier.push((s, prob * p));
                    }
                }
            }
        }
        frontier = next_frontier;
        if frontier.is_empty() {
            break;
        }
    }
    frontier
}

#[cfg(test)]
mod tests {
    use super::super::samples::{linear_grammar, mixture_grammar, three_way_grammar};
    use super::*;

    #[test]
    fn linear_continuation_is_deterministic() {
        let g = linear_grammar();
        let d = next_action_distribution(&g, &["lin.first".to_string()]).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d["lin.second"] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn branch_distribution_reads_off_the_grammar() {
        let g = three_way_grammar();
        let d = next_action_distribution(&g, &["tw.start".to_string()]).unwrap();
        assert!((d["tw.a"] - 0.5).abs() < 1e-12);
        assert!((d["tw.b"] - 0.3).abs() < 1e-12);
        assert!((d["tw.c"] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn shared_prefix_mixes_by_template_posterior() {
        // Two templates with priors 0.6/0.4 share the prefix [mix.wash,
        // mix.chop]. Template X then branches {mix.dress 0.7, mix.cheese 0.3},
        // template Y continues to mix.grain with probability 1. The posterior
        // over templates given the prefix stays 0.6/0.4 (the prefix has
        // probability 1 under both), so the mixture is
        //   mix.dress 0.42, mix.cheese 0.18, mix.grain 0.40.
        let g = mixture_grammar();
        let prefix = vec!["mix.wash".to_string(), "mix.chop".to_string()];
        let d = next_action_distribution(&g, &prefix).unwrap();
        assert!((d["mix.dress"] - 0.42).abs() < 1e-12, "{d:?}");
        assert!((d["mix.cheese"] - 0.18).abs() < 1e-12);
        assert!((d["mix.grain"] - 0.40).abs() < 1e-12);
    }

    #[test]
    fn unknown_prefix_errors() {
        let g = linear_grammar();
        let err = next_action_distribution(&g, &["nope".to_string()]).unwrap_err();
        assert!(err.to_string().contains("does not match"));
    }
}
