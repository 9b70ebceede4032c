//! Central finite-difference verification of tape gradients.
//!
//! Every trainable tensor is probed at a deterministic sample of entries;
//! the loss closure rebuilds the whole graph per probe, so whatever the
//! graph does (sampling with common random numbers included) is covered.

use crate::rng::Prng;
use crate::tape::{Gradients, ParamStore};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub entries_checked: usize,
}

/// Compares an analytic gradient lookup (`analytic(param, index)`) against
/// central differences on a sample of entries of every parameter.
/// `samples_per_param` caps the probes per tensor; the relative error uses
/// `max(|analytic|, |numeric|, 1e-3)` as denominator so near-zero gradients
/// are held to a 1e-7-ish absolute bar.
pub fn check_grads_fn(
    store: &mut ParamStore,
    analytic: impl Fn(usize, usize) -> f64,
    loss: impl Fn(&ParamStore) -> f64,
    samples_per_param: usize,
    seed: u64,
) -> GradCheckReport {
    let mut rng = Prng::derive(seed, &[0xfd]);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        entries_checked: 0,
    };
    for pid in 0..store.len() {
        let len = store.get(pid).len();
        let indices: Vec<usize> = if len <= samples_per_param {
            (0..len).collect()
        } else {
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < samples_per_param {
                picked.insert(rng.below(len));
            }
            picked.into_iter().collect()
        };
        for idx in indices {
            let orig = store.get(pid).data[idx];
            let eps = 1e-5 * orig.abs().max(1.0);
            store.get_mut(pid).data[idx] = orig + eps;
            let fp = loss(store);
            store.get_mut(pid).data[idx] = orig - eps;
            let fm = loss(store);
            store.get_mut(pid).data[idx] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic(pid, idx);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            report.entries_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!(
                    "{}[{idx}]: analytic {a:.9e} vs numeric {numeric:.9e}",
                    store.name(pid)
                );
            }
        }
    }
    report
}

pub fn assert_grads_match(
    store: &mut ParamStore,
    analytic: &Gradients,
    loss: impl Fn(&ParamStore) -> f64,
    samples_per_param: usize,
    seed: u64,
    tol: f64,
) {
    let report = check_grads_fn(
        store,
        |p, i| analytic.param_entry(p, i),
        loss,
        samples_per_param,
        seed,
    );
    assert!(
        report.max_rel_err < tol,
        "gradient check failed: max rel err {} at {} ({} entries)",
        report.max_rel_err,
        report.worst,
        report.entries_checked
    );
}
