//! The built-in desk-scale grammar: 200 tokens (40 ingredients, 40 verbs),
//! eight recipe types over nine template graphs, several branch points, and
//! one designated probe branch with probabilities {0.5, 0.3, 0.2}.
//!
//! `pasta` and `roast` are the default unseen split: they recombine mostly
//! seen words but their step sequences never occur in the other types.

use super::grammar::{BranchProbe, RecipeTemplate, StepTemplate};
use super::{Grammar, TokenRole, Vocab};

const INGREDIENTS: [&str; 40] = [
    "onion", "tomato", "cucumber", "pepper", "carrot", "celery", "garlic", "ginger", "basil",
    "parsley", "cilantro", "lettuce", "spinach", "kale", "potato", "turnip", "corn", "peas",
    "beans", "lentils", "rice", "barley", "quinoa", "bread", "cheese", "butter", "cream",
    "yogurt", "milk", "egg", "chicken", "beef", "pork", "tofu", "shrimp", "salmon", "mushroom",
    "zucchini", "eggplant", "broccoli",
];

const VERBS: [&str; 40] = [
    "wash", "chop", "whisk", "crumble", "toss", "serve", "chill", "cook", "combine", "slice",
    "heat", "sear", "pour", "stir", "saute", "add", "simmer", "boil", "blend", "season", "ladle",
    "mix", "knead", "roll", "bake", "cool", "glaze", "marinate", "preheat", "grill", "spread",
    "layer", "press", "cut", "plate", "toast", "garnish", "arrange", "roast", "spoon",
];

const OTHERS: [&str; 117] = [
    "the", "thoroughly", "into", "pieces", "dressing", "with", "oil", "topping", "over",
    "everything", "salad", "well", "on", "a", "chilled", "dish", "before", "serving", "grains",
    "until", "tender", "in", "large", "bowl", "thin", "strips", "wok", "chopped", "vegetables",
    "marinated", "protein", "savory", "sauce", "flame", "high", "hot", "right", "away", "gently",
    "warm", "stock", "diced", "now", "for", "twenty", "minutes", "briefly", "then", "reduce",
    "smooth", "salt", "and", "spice", "bowls", "batter", "dough", "out", "oven", "wire", "rack",
    "sweet", "syrup", "barbecue", "to", "charred", "meat", "against", "grain", "fresh", "relish",
    "slices", "lightly", "creamy", "filling", "evenly", "inside", "pan", "neat", "halves",
    "crisp", "side", "water", "pot", "grated", "generously", "baking", "tray", "golden",
    "family", "style", "carving", "juices", "stove", "lid", "tongs", "platter", "board", "knife",
    "pinch", "mixture", "noodles", "crust", "crumbs", "sprig", "handful", "dollop", "spoonful", "jar",
    "bunch", "low", "medium", "soft", "juicy", "tangy", "spicy", "of", "quickly",
];

/// Class tag per ingredient, parallel to [`INGREDIENTS`]. Class slots in the
/// templates resolve against these; required classes guarantee one member
/// per procedure, so a class slot names a definite, context-inferable
/// ingredient.
const CLASSES: [&str; 40] = [
    "veg", "veg", "veg", "veg", "veg", "veg", "aroma", "aroma", "aroma", "aroma",
    "aroma", "greens", "greens", "greens", "root", "root", "veg", "veg", "veg", "grain",
    "grain", "grain", "grain", "grain", "dairy", "dairy", "cream", "dairy", "dairy", "egg",
    "protein", "protein", "protein", "protein", "protein", "protein", "veg", "veg", "veg", "veg",
];

/// Action-id path of the designated {0.5, 0.3, 0.2} probe branch.
pub const DESK_PROBE: &str = "stirfry-branch";

fn node(action_id: &str, pattern: &str) -> StepTemplate {
    StepTemplate::parse(action_id, pattern)
}

pub fn desk_grammar() -> Grammar {
    let mut entries = Vec::new();
    for v in VERBS {
        entries.push((v.to_string(), TokenRole::Verb));
    }
    for i in INGREDIENTS {
        entries.push((i.to_string(), TokenRole::Ingredient));
    }
    for o in OTHERS {
        entries.push((o.to_string(), TokenRole::Other));
    }
    let vocab = Vocab::new(&entries).expect("desk vocabulary is well-formed");
    debug_assert_eq!(vocab.len(), 200);
    debug_assert_eq!(vocab.v_ing(), 40);

    let salad_a = RecipeTemplate {
        recipe_type: "salad".into(),
        nodes: vec![
            node("salad.wash", "wash the vegetables thoroughly"),
            node("salad.chop", "chop everything into pieces"),
            node("salad.dress", "whisk the @ into the dressing"),
            node("salad.crumb", "crumble the @ over the salad"),
            node("salad.toss", "toss the salad well"),
            node("salad.serve", "serve on a chilled dish"),
            node("salad.chill", "chill before serving"),
        ],
        start: vec![(0, 1.0)],
        next: vec![
            vec![(Some(1), 1.0)],
            vec![(Some(2), 0.7), (Some(3), 0.3)],
            vec![(Some(4), 1.0)],
            vec![(Some(4), 1.0)],
            vec![(Some(5), 0.8), (Some(6), 0.2)],
            vec![(None, 1.0)],
            vec![(None, 1.0)],
        ],
        ingredient_pool: vec![0, 1, 2, 8, 11, 12, 13, 24],
        required_classes: vec![],
        min_ingredients: 3,
        max_ingredients: 5,
    };

    let salad_b = RecipeTemplate {
        recipe_type: "salad".into(),
        nodes: vec![
            node("salad.wash", "wash the vegetables thoroughly"),
            node("salad.chop", "chop everything into pieces"),
            node("salad.grain", "cook the grains until tender"),
            node("salad.bowl", "combine everything in a large bowl"),
            node("salad.serve", "serve on a chilled dish"),
        ],
        start: vec![(0, 1.0)],
        next: vec![
            vec![(Some(1), 1.0)],
            vec![(Some(2), 1.0)],
            vec![(Some(3), 1.0)],
            vec![(Some(4), 1.0)],
            vec![(None, 1.0)],
        ],
        ingredient_pool: vec![0, 1, 2, 8, 11, 12, 13, 24],
        required_classes: vec![],
        min_ingredients: 3,
        max_ingredients: 5,
    };

    let stirfry = RecipeTemplate {
        recipe_type: "stirfry".into(),
        nodes: vec![
            node("stirfry.prep", "slice everything into thin strips"),
            node("stirfry.heat", "heat the oil in a wok"),
            node("stirfry.veg", "toss in the chopped vegetables"),
            node("stirfry.prot", "sear the marinated protein"),
            node("stirfry.sauce", "pour in the savory sauce"),
            node("stirfry.stir", "stir everything over a flame"),
            node("stirfry.serve", "serve hot right away"),
        ],
        start: vec![(0, 1.0)],
        next: vec![
            vec![(Some(1), 1.0)],
            vec![(Some(2), 0.5), (Some(3), 0.3), (Some(4), 0.2)],
            vec![(Some(5), 1.0)],
            vec![(Some(5), 1.0)],
            vec![(Some(5), 1.0)],
            vec![(Some(6), 1.0)],
            vec![(None, 1.0)],
        ],
        ingredient_pool: vec![3, 4, 6, 7, 30, 33, 36, 39],
        required_classes: vec![],
        min_ingredients: 3,
        max_ingredients: 5,
    };

    let soup = RecipeTemplate {
        recipe_type: "soup".into(),
        nodes: vec![
            node("soup.base", "saute the mixture gently"),
            node("soup.stock", "pour in the warm stock"),
            node("soup.add", "add a pinch of salt now"),
            node("soup.simmer", "simmer the @ for twenty minutes"),
            node("soup.boil", "boil the @ then reduce"),
            node("soup.blend", "blend until smooth"),
            node("soup.season", "season with a pinch of @"),
            node("soup.serve", "ladle into warm bowls"),
        ],
        start: vec![(0, 1.0)],
        next: vec![
            vec![(Some(1), 1.0)],
            vec![(Some(2), 1.0)],
            vec![(Some(3), 0.6), (Some(4), 0.4)],
            vec![(Some(5), 0.5), (Some(6), 0.5)],
            vec![(Some(5), 0.5), (Some(6), 0.5)],
            vec![(Some(7), 1.0)],
            vec![(Some(7), 1.0)],
            vec![(None, 1.0)],
        ],
        ingredient_pool: vec![0, 4, 5, 6, 14, 16, 19, 26],
        required_classes: vec![],
        min_ingredients: 4,
        max_ingredients: 5,
    };

    let bake = RecipeTemplate {
        recipe_type: "bake".into(),
        nodes: vec![
            node("bake.mix", "mix the batter well"),
            node("bake.knead", "knead the dough until smooth"),
            node("bake.rest", "chill the dough briefly"),
            node("bake.roll", "roll the dough out thin"),
            node("bake.oven", "bake in a hot oven"),
            node("bake.cool", "cool on a wire rack"),
            node("bake.glaze", "glaze with sweet @"),
        ],
        start: vec![(0, 1.0)],
        next: vec![
            vec![(Some(1), 1.0)],
            vec![(Some(2), 0.5), (Some(3), 0.5)],
            vec![(Some(4), 1.0)],
            vec![(Some(4), 1.0)],
            vec![(Some(5), 0.7), (Some(6), 0.3)],
            vec![(None, 1.0)],
            vec![(None, 1.0)],
        ],
        ingredient_pool: vec![25, 26, 27, 28, 29],
        required_classes: vec![],
        min_ingredients: 2,
        max_ingredients: 4,
    };

    let grill = RecipeTemplate {
        recipe_type: "grill".into(),
        nodes: vec![
            node("grill.mar", "marinate the meat well"),
            node("grill.pre", "preheat the barbecue to high"),
            node("grill.cook", "grill until lightly charred"),
            node("grill.rest", "cool the meat briefly"),
            node("grill.slice", "slice the @ against the grain"),
            node("grill.serve", "serve with a fresh relish"),
        ],
        start: vec![(0, 1.0)],
        next: vec![
            vec![(Some(1), 1.0)],
            vec![(Some(2), 1.0)],
            vec![(Some(3), 0.6), (Some(4), 0.4)],
            vec![(Some(5), 1.0)],
            vec![(Some(5), 1.0)],
            vec![(None, 1.0)],
        ],
        ingredient_pool: vec![30, 31, 32, 34, 35, 37, 38],
        required_classes: vec![],
        min_ingredients: 2,
        max_ingredients: 4,
    };

    let sandwich = RecipeTemplate {
        recipe_type: "sandwich".into(),
        nodes: vec![
            node("sandwich.toast", "toast the slices lightly"),
            node("sandwich.spread", "spread the creamy filling evenly"),
            node("sandwich.layer", "layer the filling inside"),
            node("sandwich.press", "press the @ in the pan"),
            node("sandwich.cut", "cut into neat halves"),
            node("sandwich.plate", "plate with a crisp side"),
        ],
        start: vec![(0, 1.0)],
        next: vec![
            vec![(Some(1), 1.0)],
            vec![(Some(2), 1.0)],
            vec![(Some(3), 0.5), (Some(4), 0.5)],
            vec![(Some(5), 1.0)],
            vec![(Some(5), 1.0)],
            vec![(None, 1.0)],
        ],
        ingredient_pool: vec![0, 1, 11, 23, 24, 29],
        required_classes: vec![],
        min_ingredients: 2,
        max_ingredients: 4,
    };

    let pasta = RecipeTemplate {
        recipe_type: "pasta".into(),
        nodes: vec![
            node("pasta.boil", "boil water in a large pot"),
            node("pasta.cook", "cook the noodles until tender"),
            node("pasta.sauce", "simmer the sauce gently"),
            node("pasta.toss", "toss everything with the sauce"),
            node("pasta.bake", "bake with the grated @"),
            node("pasta.fin", "garnish and serve right away"),
        ],
        start: vec![(0, 1.0)],
        next: vec![
            vec![(Some(1), 1.0)],
            vec![(Some(2), 1.0)],
            vec![(Some(3), 0.6), (Some(4), 0.4)],
            vec![(Some(5), 1.0)],
            vec![(Some(5), 1.0)],
            vec![(None, 1.0)],
        ],
        ingredient_pool: vec![1, 6, 8, 24, 26, 36],
        required_classes: vec![],
        min_ingredients: 2,
        max_ingredients: 4,
    };

    let roast = RecipeTemplate {
        recipe_type: "roast".into(),
        nodes: vec![
            node("roast.season", "season the meat generously"),
            node("roast.tray", "arrange on a baking tray"),
            node("roast.roast", "roast until golden and crisp"),
            node("roast.rest", "cool before carving"),
            node("roast.spoon", "spoon the juices over the @"),
            node("roast.serve", "serve family style"),
        ],
        start: vec![(0, 1.0)],
        next: vec![
            vec![(Some(1), 1.0)],
            vec![(Some(2), 1.0)],
            vec![(Some(3), 0.5), (Some(4), 0.5)],
            vec![(Some(5), 1.0)],
            vec![(Some(5), 1.0)],
            vec![(None, 1.0)],
        ],
        ingredient_pool: vec![4, 6, 14, 15, 30, 31, 32],
        required_classes: vec![],
        min_ingredients: 3,
        max_ingredients: 5,
    };

    let grammar = Grammar {
        vocab,
        max_t: 8,
        max_step_len: 6,
        ingredient_classes: CLASSES.iter().map(|c| c.to_string()).collect(),
        templates: vec![
            salad_a, salad_b, stirfry, soup, bake, grill, sandwich, pasta, roast,
        ],
        template_weights: vec![0.12, 0.08, 0.15, 0.13, 0.13, 0.13, 0.12, 0.07, 0.07],
        branch_probes: vec![BranchProbe {
            name: DESK_PROBE.to_string(),
            prefix: vec!["stirfry.prep".to_string(), "stirfry.heat".to_string()],
        }],
    };
    grammar.validate().expect("desk grammar invariant");
    grammar
}

/// Default unseen recipe types for the seen/unseen split protocol.
pub fn desk_unseen_types() -> Vec<String> {
    vec!["pasta".to_string(), "roast".to_string()]
}
