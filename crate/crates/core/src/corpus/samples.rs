//! Small fixture grammars with hand-checkable distributions, used across the
//! test suites and handy for experimenting at the REPL scale.

use super::grammar::{RecipeTemplate, StepTemplate};
use super::{Grammar, TokenRole, Vocab};

fn vocab(verbs: &[&str], ingredients: &[&str], others: &[&str]) -> Vocab {
    let mut entries = Vec::new();
    for v in verbs {
        entries.push((v.to_string(), TokenRole::Verb));
    }
    for i in ingredients {
        entries.push((i.to_string(), TokenRole::Ingredient));
    }
    for o in others {
        entries.push((o.to_string(), TokenRole::Other));
    }
    Vocab::new(&entries).expect("fixture vocab is well-formed")
}

/// Three deterministic steps; no branch points anywhere.
pub fn linear_grammar() -> Grammar {
    let vocab = vocab(
        &["mix", "pour", "bake"],
        &["milk", "eggs"],
        &["the", "batter", "in", "oven"],
    );
    let template = RecipeTemplate {
        recipe_type: "lin".to_string(),
        nodes: vec![
            StepTemplate::parse("lin.first", "mix the @"),
            StepTemplate::parse("lin.second", "pour the batter"),
            StepTemplate::parse("lin.third", "bake in the oven"),
        ],
        start: vec![(0, 1.0)],
        next: vec![
            vec![(Some(1), 1.0)],
            vec![(Some(2), 1.0)],
            vec![(None, 1.0)],
        ],
        ingredient_pool: vec![0, 1],
        required_classes: vec![],
        min_ingredients: 1,
        max_ingredients: 2,
    };
    Grammar {
        vocab,
        max_t: 8,
        max_step_len: 6,
        ingredient_classes: vec!["item".to_string(); 2],
        templates: vec![template],
        template_weights: vec![1.0],
        branch_probes: vec![],
    }
}

/// One branch point with probabilities {a: 0.5, b: 0.3, c: 0.2}.
pub fn three_way_grammar() -> Grammar {
    let vocab = vocab(
        &["heat", "add", "stir", "season", "serve"],
        &["onion", "tomato", "garlic"],
        &["the", "pan", "sauce", "with", "salt", "right", "away"],
    );
    let template = RecipeTemplate {
        recipe_type: "tw".to_string(),
        nodes: vec![
            StepTemplate::parse("tw.start", "heat the pan"),
            StepTemplate::parse("tw.a", "add the @"),
            StepTemplate::parse("tw.b", "stir the sauce"),
            StepTemplate::parse("tw.c", "season with salt"),
            StepTemplate::parse("tw.end", "serve right away"),
        ],
        start: vec![(0, 1.0)],
        next: vec![
            vec![(Some(1), 0.5), (Some(2), 0.3), (Some(3), 0.2)],
            vec![(Some(4), 1.0)],
            vec![(Some(4), 1.0)],
            vec![(Some(4), 1.0)],
            vec![(None, 1.0)],
        ],
        ingredient_pool: vec![0, 1, 2],
        required_classes: vec![],
        min_ingredients: 1,
        max_ingredients: 3,
    };
    Grammar {
        vocab,
        max_t: 8,
        max_step_len: 6,
        ingredient_classes: vec!["item".to_string(); 3],
        templates: vec![template],
        template_weights: vec![1.0],
        branch_probes: vec![super::grammar::BranchProbe {
            name: "tw-branch".to_string(),
            prefix: vec!["tw.start".to_string()],
        }],
    }
}

/// Two templates with priors 0.6/0.4 sharing the prefix
/// [mix.wash, mix.chop]; the first then branches {dress 0.7, crumb 0.3},
/// the second continues deterministically to mix.grain.
pub fn mixture_grammar() -> Grammar {
    let vocab = vocab(
        &["wash", "chop", "whisk", "crumble", "toss", "cook", "combine"],
        &["lettuce", "tomato", "cucumber"],
        &[
            "the", "dressing", "topping", "it", "well", "grains", "in", "a", "bowl",
        ],
    );
    let wash = StepTemplate::parse("mix.wash", "wash the @");
    let chop = StepTemplate::parse("mix.chop", "chop the @");
    let tpl_x = RecipeTemplate {
        recipe_type: "mix".to_string(),
        nodes: vec![
            wash.clone(),
            chop.clone(),
            StepTemplate::parse("mix.dress", "whisk the dressing"),
            StepTemplate::parse("mix.cheese", "crumble the topping"),
            StepTemplate::parse("mix.toss", "toss it well"),
        ],
        start: vec![(0, 1.0)],
        next: vec![
            vec![(Some(1), 1.0)],
            vec![(Some(2), 0.7), (Some(3), 0.3)],
            vec![(Some(4), 1.0)],
            vec![(Some(4), 1.0)],
            vec![(None, 1.0)],
        ],
        ingredient_pool: vec![0, 1, 2],
        required_classes: vec![],
        min_ingredients: 2,
        max_ingredients: 3,
    };
    let tpl_y = RecipeTemplate {
        recipe_type: "mix".to_string(),
        nodes: vec![
            wash,
            chop,
            StepTemplate::parse("mix.grain", "cook the grains"),
            StepTemplate::parse("mix.bowl", "combine in a bowl"),
        ],
        start: vec![(0, 1.0)],
        next: vec![
            vec![(Some(1), 1.0)],
            vec![(Some(2), 1.0)],
            vec![(Some(3), 1.0)],
            vec![(None, 1.0)],
        ],
        ingredient_pool: vec![0, 1, 2],
        required_classes: vec![],
        min_ingredients: 2,
        max_ingredients: 3,
    };
    Grammar {
        vocab,
        max_t: 8,
        max_step_len: 6,
        ingredient_classes: vec!["item".to_string(); 3],
        templates: vec![tpl_x, tpl_y],
        template_weights: vec![0.6, 0.4],
        branch_probes: vec![],
    }
}
