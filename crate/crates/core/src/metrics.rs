//! Evaluation metrics.
//!
//! Corpus-level (micro) metrics pool the underlying statistics across the
//! corpus before applying the formula; macro metrics apply the formula per
//! sentence and average. Best-of-k evaluation selects, per pair, the
//! candidate closest to the ground truth by bag-of-words Jaccard similarity
//! and scores only that candidate against the single reference.
//!
//! The sentence-matching score here is the exact-match variant of the
//! standard unigram-F/chunk-penalty formula (weights 9 and 0.5); it is
//! reported as `meteor_like` everywhere because no stemming or synonym
//! matching is involved.

use std::collections::BTreeMap;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    next_action_distribution, total_variation, Grammar, PatternItem, Step, StepTemplate, TokenId,
    TokenRole, Vocab,
};
use crate::decoder::DecodedSentence;
use crate::error::{Error, Result};
use crate::model::PredictionMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Micro,
    Macro,
    Both,
}

/// One evaluation unit: the ground-truth next step and k >= 1 candidates.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub context_id: String,
    pub ground_truth: Step,
    pub candidates: Vec<DecodedSentence>,
}

/// Bag-of-words Jaccard over unique token ids; 1.0 when both sets are empty.
pub fn jaccard_bow(a: &[TokenId], b: &[TokenId]) -> f64 {
    let sa: std::collections::BTreeSet<TokenId> = a.iter().copied().collect();
    let sb: std::collections::BTreeSet<TokenId> = b.iter().copied().collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count() as f64;
    let union = sa.union(&sb).count() as f64;
    inter / union
}

/// Index of the candidate maximizing Jaccard similarity to the ground
/// truth; ties break toward the lowest candidate index.
pub fn select_best(pair: &EvalPair) -> usize {
    assert!(!pair.candidates.is_empty(), "candidates must be non-empty");
    let mut best = 0;
    let mut best_score = -1.0;
    for (i, cand) in pair.candidates.iter().enumerate() {
        let score = jaccard_bow(&cand.tokens, &pair.ground_truth.tokens);
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    best
}

fn ngram_counts(tokens: &[TokenId], n: usize) -> HashMap<&[TokenId], usize> {
    let mut counts: HashMap<&[TokenId], usize> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
}

#[derive(Default, Clone)]
struct BleuStats {
    matched: Vec<usize>,
    total: Vec<usize>,
    cand_len: usize,
    ref_len: usize,
}

impl BleuStats {
    fn new(max_n: usize) -> Self {
        BleuStats {
            matched: vec![0; max_n],
            total: vec![0; max_n],
            cand_len: 0,
            ref_len: 0,
        }
    }

    fn add(&mut self, cand: &[TokenId], reference: &[TokenId], max_n: usize) {
        self.cand_len += cand.len();
        self.ref_len += reference.len();
        for n in 1..=max_n {
            let cand_counts = ngram_counts(cand, n);
            let ref_counts = ngram_counts(reference, n);
            for (gram, c) in cand_counts {
                let r = ref_counts.get(gram).copied().unwrap_or(0);
                self.matched[n - 1] += c.min(r);
            }
            self.total[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }

    fn score(&self, max_n: usize) -> f64 {
        if self.cand_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..max_n {
            if self.matched[n] == 0 || self.total[n] == 0 {
                return 0.0;
            }
            log_sum += (self.matched[n] as f64 / self.total[n] as f64).ln();
        }
        let bp = (1.0 - self.ref_len as f64 / self.cand_len as f64).min(0.0).exp();
        bp * (log_sum / max_n as f64).exp()
    }
}

/// BLEU over a corpus of (candidate, reference) pairs with one reference per
/// candidate. Micro pools clipped n-gram statistics and lengths; macro
/// scores each sentence with the same (unsmoothed) formula and averages.
pub fn bleu(
    candidates: &[Vec<TokenId>],
    references: &[Vec<TokenId>],
    max_n: usize,
    averaging: Averaging,
) -> f64 {
    assert_eq!(candidates.len(), references.len(), "pair count mismatch");
    assert!(!candidates.is_empty(), "need at least one pair");
    match averaging {
        Averaging::Micro => {
            let mut stats = BleuStats::new(max_n);
            for (c, r) in candidates.iter().zip(references) {
                stats.add(c, r, max_n);
            }
            stats.score(max_n)
        }
        Averaging::Macro => {
            let mut sum = 0.0;
            for (c, r) in candidates.iter().zip(references) {
                let mut stats = BleuStats::new(max_n);
                stats.add(c, r, max_n);
                sum += stats.score(max_n);
            }
            sum / candidates.len() as f64
        }
        Averaging::Both => panic!("resolve Both into Micro or Macro before scoring"),
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct MeteorStats {
    matches: usize,
    chunks: usize,
    cand_len: usize,
    ref_len: usize,
}

fn meteor_align(cand: &[TokenId], reference: &[TokenId]) -> MeteorStats {
    // Greedy left-to-right exact alignment: each reference token is matched
    // at most once.
    let mut ref_used = vec![false; reference.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (ci, c) in cand.iter().enumerate() {
        for (ri, r) in reference.iter().enumerate() {
            if !ref_used[ri] && r == c {
                ref_used[ri] = true;
                pairs.push((ci, ri));
                break;
            }
        }
    }
    // Chunks: maximal runs adjacent in both sentences.
    let mut chunks = 0;
    for (i, &(ci, ri)) in pairs.iter().enumerate() {
        if i == 0 || pairs[i - 1].0 + 1 != ci || pairs[i - 1].1 + 1 != ri {
            chunks += 1;
        }
    }
    MeteorStats {
        matches: pairs.len(),
        chunks,
        cand_len: cand.len(),
        ref_len: reference.len(),
    }
}

fn meteor_score(s: MeteorStats) -> f64 {
    if s.matches == 0 || s.cand_len == 0 || s.ref_len == 0 {
        return 0.0;
    }
    let p = s.matches as f64 / s.cand_len as f64;
    let r = s.matches as f64 / s.ref_len as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (s.chunks as f64 / s.matches as f64).powi(3);
    f * (1.0 - penalty)
}

/// Sentence-level meteor_like score.
pub fn meteor_like(candidate: &[TokenId], reference: &[TokenId]) -> f64 {
    meteor_score(meteor_align(candidate, reference))
}

/// Corpus meteor_like: micro pools matches, lengths and chunks before the
/// formula; macro averages sentence scores.
pub fn meteor_like_corpus(
    candidates: &[Vec<TokenId>],
    references: &[Vec<TokenId>],
    averaging: Averaging,
) -> f64 {
    assert_eq!(candidates.len(), references.len());
    assert!(!candidates.is_empty());
    match averaging {
        Averaging::Micro => {
            let mut acc = MeteorStats::default();
            for (c, r) in candidates.iter().zip(references) {
                let s = meteor_align(c, r);
                acc.matches += s.matches;
                acc.chunks += s.chunks;
                acc.cand_len += s.cand_len;
                acc.ref_len += s.ref_len;
            }
            meteor_score(acc)
        }
        Averaging::Macro => {
            candidates
                .iter()
                .zip(references)
                .map(|(c, r)| meteor_like(c, r))
                .sum::<f64>()
                / candidates.len() as f64
        }
        Averaging::Both => panic!("resolve Both into Micro or Macro before scoring"),
    }
}

/// Unique ground-truth token ids of a role.
fn role_set(step: &Step, vocab: &Vocab, role: TokenRole) -> std::collections::BTreeSet<TokenId> {
    step.tokens
        .iter()
        .copied()
        .filter(|&t| vocab.role(t) == role)
        .collect()
}

/// Per-pair recall of ground-truth tokens of one role; `None` when the
/// ground truth has no tokens of the role (the pair contributes no sample).
pub fn role_recall_pair(
    selected: &[TokenId],
    gt: &Step,
    vocab: &Vocab,
    role: TokenRole,
) -> Option<(usize, usize)> {
    let wanted = role_set(gt, vocab, role);
    if wanted.is_empty() {
        return None;
    }
    let have: std::collections::BTreeSet<TokenId> = selected.iter().copied().collect();
    Some((wanted.intersection(&have).count(), wanted.len()))
}

fn recall_aggregate(samples: &[(usize, usize)], averaging: Averaging) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    match averaging {
        Averaging::Micro => {
            let matched: usize = samples.iter().map(|s| s.0).sum();
            let total: usize = samples.iter().map(|s| s.1).sum();
            matched as f64 / total as f64
        }
        Averaging::Macro => {
            samples.iter().map(|s| s.0 as f64 / s.1 as f64).sum::<f64>() / samples.len() as f64
        }
        Averaging::Both => panic!("resolve Both into Micro or Macro before scoring"),
    }
}

/// A metric reported under both averaging conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub micro: f64,
    pub macro_avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: PredictionMode,
    pub k: usize,
    pub pairs: usize,
    pub ing_recall: MetricValue,
    pub verb_recall: MetricValue,
    pub b1: MetricValue,
    pub b4: MetricValue,
    pub meteor_like: MetricValue,
    /// Total-variation distance of the probe branch, when probed.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diversity_tv: Option<f64>,
}

/// Scores a set of evaluation pairs: per pair, the Jaccard-closest candidate
/// is selected and scored against the single ground truth.
pub fn score_pairs(pairs: &[EvalPair], vocab: &Vocab, mode: PredictionMode, k: usize) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::data("no evaluation pairs"));
    }
    let mut cands = Vec::with_capacity(pairs.len());
    let mut refs = Vec::with_capacity(pairs.len());
    let mut ing_samples = Vec::new();
    let mut verb_samples = Vec::new();
    for pair in pairs {
        let best = &pair.candidates[select_best(pair)];
        if let Some(s) = role_recall_pair(&best.tokens, &pair.ground_truth, vocab, TokenRole::Ingredient) {
            ing_samples.push(s);
        }
        if let Some(s) = role_recall_pair(&best.tokens, &pair.ground_truth, vocab, TokenRole::Verb) {
            verb_samples.push(s);
        }
        cands.push(best.tokens.clone());
        refs.push(pair.ground_truth.tokens.clone());
    }
    Ok(MetricsReport {
        mode,
        k,
        pairs: pairs.len(),
        ing_recall: MetricValue {
            micro: recall_aggregate(&ing_samples, Averaging::Micro),
            macro_avg: recall_aggregate(&ing_samples, Averaging::Macro),
        },
        verb_recall: MetricValue {
            micro: recall_aggregate(&verb_samples, Averaging::Micro),
            macro_avg: recall_aggregate(&verb_samples, Averaging::Macro),
        },
        b1: MetricValue {
            micro: bleu(&cands, &refs, 1, Averaging::Micro),
            macro_avg: bleu(&cands, &refs, 1, Averaging::Macro),
        },
        b4: MetricValue {
            micro: bleu(&cands, &refs, 4, Averaging::Micro),
            macro_avg: bleu(&cands, &refs, 4, Averaging::Macro),
        },
        meteor_like: MetricValue {
            micro: meteor_like_corpus(&cands, &refs, Averaging::Micro),
            macro_avg: meteor_like_corpus(&cands, &refs, Averaging::Macro),
        },
        diversity_tv: None,
    })
}

/// Maps a decoded sentence to the grammar action it most plausibly realizes:
/// exact template match first (fixed tokens equal, slots filled by
/// ingredient-role tokens), else the Jaccard-nearest template by fixed
/// surfaces, else `None` (counted under a reserved OTHER action).
pub fn match_action<'g>(grammar: &'g Grammar, tokens: &[TokenId]) -> Option<&'g str> {
    let mut seen = std::collections::HashSet::new();
    let mut actions: Vec<&StepTemplate> = Vec::new();
    for a in grammar.all_actions() {
        if seen.insert(a.action_id.as_str()) {
            actions.push(a);
        }
    }
    for a in &actions {
        if exact_template_match(grammar, a, tokens) {
            return Some(&a.action_id);
        }
    }
    let token_surfaces: std::collections::BTreeSet<&str> =
        tokens.iter().map(|&t| grammar.vocab.surface(t)).collect();
    let mut best: Option<(&str, f64)> = None;
    for a in &actions {
        let fixed: std::collections::BTreeSet<&str> = a.fixed_surfaces().into_iter().collect();
        if fixed.is_empty() {
            continue;
        }
        let inter = token_surfaces.intersection(&fixed).count() as f64;
        let union = token_surfaces.union(&fixed).count() as f64;
        let j = inter / union;
        if j > 0.0 && best.map(|(_, s)| j > s).unwrap_or(true) {
            best = Some((&a.action_id, j));
        }
    }
    best.map(|(id, _)| id)
}

fn exact_template_match(grammar: &Grammar, tpl: &StepTemplate, tokens: &[TokenId]) -> bool {
    if tokens.len() != tpl.pattern.len() {
        return false;
    }
    tpl.pattern.iter().zip(tokens).all(|(item, &tok)| match item {
        PatternItem::Fixed(surface) => grammar.vocab.surface(tok) == surface,
        // Any ingredient realizes a slot; class restrictions are a
        // generation-side rule, not a recognition-side one.
        PatternItem::IngredientSlot | PatternItem::ClassSlot(_) => {
            grammar.vocab.role(tok) == TokenRole::Ingredient
        }
    })
}

/// Reserved key for decodes that match no grammar action.
pub const OTHER_ACTION: &str = "<other>";

/// Total-variation distance between an empirical action distribution over
/// decoded next steps and the grammar oracle at `branch_prefix`.
pub fn diversity_tv(
    decodes: &[Vec<TokenId>],
    grammar: &Grammar,
    branch_prefix: &[String],
) -> Result<f64> {
    if decodes.is_empty() {
        return Err(Error::data("no decodes to score"));
    }
    let oracle = next_action_distribution(grammar, branch_prefix)?;
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    for tokens in decodes {
        let key = match_action(grammar, tokens).unwrap_or(OTHER_ACTION);
        *counts.entry(key.to_string()).or_default() += 1.0;
    }
    let n = decodes.len() as f64;
    for v in counts.values_mut() {
        *v /= n;
    }
    Ok(total_variation(&counts, &oracle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::samples::three_way_grammar;
    use crate::decoder::DecodeSource;

    fn toks(vocab: &Vocab, text: &str) -> Vec<TokenId> {
        text.split_whitespace()
            .map(|w| vocab.lookup(w).unwrap_or_else(|| panic!("unknown word {w}")))
            .collect()
    }

    fn sentence(tokens: Vec<TokenId>) -> DecodedSentence {
        DecodedSentence {
            tokens,
            logprob: 0.0,
            source: DecodeSource::Greedy,
            terminated: true,
        }
    }

    #[test]
    fn jaccard_golden_values() {
        let g = three_way_grammar();
        let v = &g.vocab;
        // identical
        let a = toks(v, "add the onion");
        assert_eq!(jaccard_bow(&a, &a), 1.0);
        // "add salt and pepper" vs "add salt" analogue:
        // {add, the, onion, tomato} vs {add, the} -> 2/4
        let b = toks(v, "add the onion tomato");
        let c = toks(v, "add the");
        assert!((jaccard_bow(&b, &c) - 0.5).abs() < 1e-9);
        // disjoint
        let d = toks(v, "serve");
        let e = toks(v, "stir");
        assert_eq!(jaccard_bow(&d, &e), 0.0);
        // both empty
        assert_eq!(jaccard_bow(&[], &[]), 1.0);
        // symmetry and bounds over arbitrary pairs
        assert_eq!(jaccard_bow(&b, &c), jaccard_bow(&c, &b));
    }

    #[test]
    fn select_best_prefers_jaccard_and_breaks_ties_low() {
        let g = three_way_grammar();
        let v = &g.vocab;
        let gt = Step {
            tokens: toks(v, "add the onion"),
            action_id: "tw.a".into(),
        };
        // candidate 0: jaccard 0.5 ({add,the} / {add,the,onion,garlic}),
        // candidates 1 and 2: both 2/3 by sharing two of three unique words.
        let pair = EvalPair {
            context_id: "c".into(),
            ground_truth: gt.clone(),
            candidates: vec![
                sentence(toks(v, "add the garlic")),
                sentence(toks(v, "the onion")),
                sentence(toks(v, "onion add")),
            ],
        };
        assert!((jaccard_bow(&pair.candidates[0].tokens, &gt.tokens) - 0.5).abs() < 1e-12);
        assert!((jaccard_bow(&pair.candidates[1].tokens, &gt.tokens) - 2.0 / 3.0).abs() < 1e-12);
        assert!((jaccard_bow(&pair.candidates[2].tokens, &gt.tokens) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(select_best(&pair), 1, "first of the tied pair wins");

        // k = 1 returns the only candidate; GT itself always wins.
        let single = EvalPair {
            context_id: "s".into(),
            ground_truth: gt.clone(),
            candidates: vec![sentence(toks(v, "serve right away"))],
        };
        assert_eq!(select_best(&single), 0);
        let with_gt = EvalPair {
            context_id: "g".into(),
            ground_truth: gt.clone(),
            candidates: vec![sentence(gt.tokens.clone()), sentence(toks(v, "serve"))],
        };
        assert_eq!(select_best(&with_gt), 0);
    }

    #[test]
    fn bleu_golden_values() {
        // Perfect match: 1.0 everywhere.
        let cand = vec![vec![1u32, 2, 3, 4]];
        assert_eq!(bleu(&cand, &cand, 1, Averaging::Micro), 1.0);
        assert_eq!(bleu(&cand, &cand, 4, Averaging::Micro), 1.0);
        assert_eq!(bleu(&cand, &cand, 1, Averaging::Macro), 1.0);
        assert_eq!(bleu(&cand, &cand, 4, Averaging::Macro), 1.0);

        // "a b c d" vs "a b x d": B1 = 3/4, BP = 1.
        let c = vec![vec![10u32, 11, 12, 13]];
        let r = vec![vec![10u32, 11, 99, 13]];
        assert!((bleu(&c, &r, 1, Averaging::Micro) - 0.75).abs() < 1e-9);

        // Micro vs macro divergence: one long perfect pair, one short wrong
        // pair. Micro B1 = 6/7 (pooled counts, BP = 1); macro = (1 + 0)/2.
        let cands = vec![vec![1u32, 2, 3, 4, 5, 6], vec![40u32]];
        let refs = vec![vec![1u32, 2, 3, 4, 5, 6], vec![41u32]];
        let micro = bleu(&cands, &refs, 1, Averaging::Micro);
        let macro_ = bleu(&cands, &refs, 1, Averaging::Macro);
        assert!((micro - 6.0 / 7.0).abs() < 1e-9, "micro {micro}");
        assert!((macro_ - 0.5).abs() < 1e-9, "macro {macro_}");
        assert!(micro > macro_);
    }

    #[test]
    fn bleu_edge_cases() {
        // Empty candidate contributes zero matches but lengths still pool.
        let cands = vec![vec![], vec![1u32, 2]];
        let refs = vec![vec![7u32, 8], vec![1u32, 2]];
        let micro = bleu(&cands, &refs, 1, Averaging::Micro);
        // matched 2, total 2, BP = exp(1 - 4/2) = e^-1.
        assert!((micro - (-1.0f64).exp()).abs() < 1e-9);
        // Sentence-level zero n-gram count scores zero, no smoothing.
        let macro4 = bleu(&[vec![1u32, 2]], &[vec![1u32, 2]], 4, Averaging::Macro);
        assert_eq!(macro4, 0.0, "2-token sentence has no 4-grams");
    }

    #[test]
    fn micro_equals_macro_on_identical_single_sentences() {
        let cands: Vec<Vec<TokenId>> = (0..5).map(|_| vec![3u32, 4, 5]).collect();
        let refs = cands.clone();
        for n in [1usize, 4] {
            let micro = bleu(&cands, &refs, n, Averaging::Micro);
            let macro_ = bleu(&cands, &refs, n, Averaging::Macro);
            assert_eq!(micro, macro_);
        }
        assert_eq!(
            meteor_like_corpus(&cands, &refs, Averaging::Micro),
            meteor_like_corpus(&cands, &refs, Averaging::Macro)
        );
    }

    #[test]
    fn meteor_like_golden_values() {
        // No overlap -> 0.
        assert_eq!(meteor_like(&[1, 2], &[3, 4]), 0.0);
        // Identical 4-token sentence: F = 1, chunks = 1,
        // penalty = 0.5 * (1/4)^3, score = 0.9921875.
        let s = vec![1u32, 2, 3, 4];
        assert!((meteor_like(&s, &s) - 0.9921875).abs() < 1e-12);
        // "b a" vs "a b": m = 2, F = 1, chunks = 2, penalty = 0.5.
        assert!((meteor_like(&[2, 1], &[1, 2]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn role_recall_golden_values() {
        let g = three_way_grammar();
        let v = &g.vocab;
        let gt = Step {
            tokens: toks(v, "add the onion tomato"),
            action_id: "tw.a".into(),
        };
        // selected = gt -> (1.0, 1.0)
        let full = role_recall_pair(&gt.tokens, &gt, v, TokenRole::Ingredient).unwrap();
        assert_eq!(full, (2, 2));
        let verb = role_recall_pair(&gt.tokens, &gt, v, TokenRole::Verb).unwrap();
        assert_eq!(verb, (1, 1));
        // prediction has the verb and one of two ingredients -> (0.5, 1.0)
        let pred = toks(v, "add the onion");
        let ing = role_recall_pair(&pred, &gt, v, TokenRole::Ingredient).unwrap();
        assert_eq!(ing.0 as f64 / ing.1 as f64, 0.5);
        assert_eq!(role_recall_pair(&pred, &gt, v, TokenRole::Verb).unwrap(), (1, 1));
        // GT with no ingredient tokens is excluded from the average.
        let no_ing = Step {
            tokens: toks(v, "serve right away"),
            action_id: "tw.end".into(),
        };
        assert!(role_recall_pair(&pred, &no_ing, v, TokenRole::Ingredient).is_none());
    }

    #[test]
    fn diversity_tv_golden_values() {
        let g = three_way_grammar();
        let v = &g.vocab;
        let prefix = vec!["tw.start".to_string()];
        // Decodes realizing exactly the oracle distribution: TV = 0.
        let a = toks(v, "add the onion");
        let b = toks(v, "stir the sauce");
        let c = toks(v, "season with salt");
        let mut decodes = Vec::new();
        for _ in 0..5 {
            decodes.push(a.clone());
        }
        for _ in 0..3 {
            decodes.push(b.clone());
        }
        for _ in 0..2 {
            decodes.push(c.clone());
        }
        let tv = diversity_tv(&decodes, &g, &prefix).unwrap();
        assert!(tv.abs() < 1e-12, "tv {tv}");
        // All mass on one action vs {0.5, 0.3, 0.2}: TV = 0.5.
        let one: Vec<Vec<TokenId>> = (0..10).map(|_| a.clone()).collect();
        let tv = diversity_tv(&one, &g, &prefix).unwrap();
        assert!((tv - 0.5).abs() < 1e-12, "tv {tv}");
    }

    #[test]
    fn match_action_exact_slots_and_nearest() {
        let g = three_way_grammar();
        let v = &g.vocab;
        // Exact with a slot filled by an ingredient.
        assert_eq!(match_action(&g, &toks(v, "add the garlic")), Some("tw.a"));
        // Slot filled by a non-ingredient word: not exact, falls back to
        // Jaccard-nearest, still tw.a ({add, the}).
        assert_eq!(match_action(&g, &toks(v, "add the pan")), Some("tw.a"));
        // Gibberish with no overlap maps to None.
        assert_eq!(match_action(&g, &toks(v, "onion garlic")), None);
    }

    #[test]
    fn scored_report_stays_in_unit_interval_and_is_order_invariant() {
        let g = three_way_grammar();
        let v = &g.vocab;
        let corpus = crate::corpus::generate_corpus(&g, 40, 9).unwrap();
        let mut pairs = Vec::new();
        for (i, p) in corpus.iter().enumerate() {
            let gt = p.steps[1].clone();
            pairs.push(EvalPair {
                context_id: format!("{i}"),
                ground_truth: gt,
                candidates: vec![
                    sentence(toks(v, "add the onion")),
                    sentence(toks(v, "stir the sauce")),
                    sentence(toks(v, "serve right away")),
                ],
            });
        }
        let report = score_pairs(&pairs, v, PredictionMode::Multi, 3).unwrap();
        for m in [
            report.ing_recall,
            report.verb_recall,
            report.b1,
            report.b4,
            report.meteor_like,
        ] {
            assert!(m.micro >= 0.0 && m.micro <= 1.0);
            assert!(m.macro_avg >= 0.0 && m.macro_avg <= 1.0);
        }
        let mut reversed = pairs.clone();
        reversed.reverse();
        let report2 = score_pairs(&reversed, v, PredictionMode::Multi, 3).unwrap();
        assert_eq!(report.b1, report2.b1);
        assert_eq!(report.meteor_like, report2.meteor_like);
        assert_eq!(report.ing_recall, report2.ing_recall);
    }
}
