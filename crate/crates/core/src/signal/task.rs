//! Diagnostic task definitions and split assembly.
//!
//! A task prescribes which operating conditions feed the supervised,
//! unsupervised, and test pools (e.g. C3 labels data from the 0 hp load but
//! clusters and tests on the 1-3 hp loads). `build_task` turns a corpus of
//! raw records into the corresponding [`TaskSplit`], honoring per-class
//! counts, drawing windows without replacement, and shrinking the
//! segmentation stride when records are too short to supply the requested
//! counts at the default overlap.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainingConfig;
use crate::error::{Error, Result};
use crate::signal::{fft_preprocess, segment_count, RawRecord, SpectrumSample, TaskSplit};

/// Which conditions each split draws from. An empty list means "every
/// condition present in the corpus" (used by the MFPT-style tasks, whose
/// training and test sets mix all operating conditions).
#[derive(Debug, Clone)]
pub struct TaskDef {
    pub id: String,
    pub n_cluster: usize,
    pub sup_conds: Vec<String>,
    pub unsup_conds: Vec<String>,
    pub test_conds: Vec<String>,
    /// Label a fraction of the training pool instead of a fixed count per
    /// class (the "1% of training samples are labeled" tasks).
    pub fraction_labeled: bool,
    /// No labeled or test pool; evaluation is on the unlabeled pool's
    /// retained ground truth.
    pub unsupervised_only: bool,
}

fn conds(tags: &[&str]) -> Vec<String> {
    tags.iter().map(|t| t.to_string()).collect()
}

/// Look up a task by identifier.
///
/// `C1`..`C5` and `UnsupC1` are the 10-class rolling-bearing tasks routed by
/// motor load; `M1`/`UnsupM1` are the 3-class tasks mixing all conditions;
/// `Synth<K>` (K in 2..=10) are K-class synthetic desk tasks drawing all
/// splits from the "0hp" condition.
pub fn task_def(id: &str) -> Result<TaskDef> {
    let base = TaskDef {
        id: id.to_string(),
        n_cluster: 10,
        sup_conds: vec![],
        unsup_conds: vec![],
        test_conds: vec![],
        fraction_labeled: false,
        unsupervised_only: false,
    };
    let def = match id {
        "C1" => TaskDef {
            sup_conds: conds(&["0hp"]),
            unsup_conds: conds(&["0hp"]),
            test_conds: conds(&["0hp"]),
            ..base
        },
        "C2" => TaskDef {
            sup_conds: conds(&["0hp"]),
            unsup_conds: conds(&["0hp"]),
            test_conds: conds(&["1hp", "2hp", "3hp"]),
            ..base
        },
        "C3" => TaskDef {
            sup_conds: conds(&["0hp"]),
            unsup_conds: conds(&["1hp", "2hp", "3hp"]),
            test_conds: conds(&["1hp", "2hp", "3hp"]),
            ..base
        },
        "C4" => TaskDef {
            sup_conds: conds(&["0hp"]),
            unsup_conds: conds(&["0hp", "1hp", "2hp", "3hp"]),
            test_conds: conds(&["1hp", "2hp", "3hp"]),
            ..base
        },
        "C5" => TaskDef {
            sup_conds: conds(&["2hp"]),
            unsup_conds: conds(&["2hp"]),
            test_conds: conds(&["2hp"]),
            fraction_labeled: true,
            ..base
        },
        "M1" => TaskDef {
            n_cluster: 3,
            fraction_labeled: true,
            ..base
        },
        "UnsupC1" => TaskDef {
            unsup_conds: conds(&["2hp"]),
            unsupervised_only: true,
            ..base
        },
        "UnsupM1" => TaskDef {
            n_cluster: 3,
            unsupervised_only: true,
            ..base
        },
        other => {
            if let Some(k) = other
                .strip_prefix("Synth")
                .and_then(|s| s.parse::<usize>().ok())
            {
                if !(2..=10).contains(&k) {
                    return Err(Error::UnknownTask(format!(
                        "{other} (synthetic class count must be 2..=10)"
                    )));
                }
                TaskDef {
                    n_cluster: k,
                    sup_conds: conds(&["0hp"]),
                    unsup_conds: conds(&["0hp"]),
                    test_conds: conds(&["0hp"]),
                    ..base
                }
            } else {
                return Err(Error::UnknownTask(other.to_string()));
            }
        }
    };
    Ok(def)
}

/// Split `n` samples over `parts` conditions as evenly as possible, earlier
/// conditions absorbing the remainder.
fn distribute(n: usize, parts: usize) -> Vec<usize> {
    let base = n / parts;
    let rem = n % parts;
    (0..parts).map(|i| base + usize::from(i < rem)).collect()
}

/// Assemble the labeled/unlabeled/test pools for a task from a raw corpus.
///
/// Deterministic given `config.seed`. Every selected window belongs to
/// exactly one split; when a (class, condition) pool cannot supply the
/// requested window count at `config.stride`, the stride for that pool is
/// halved until it can (down to 1), increasing overlap rather than failing.
pub fn build_task(
    task_id: &str,
    corpus: &[RawRecord],
    config: &TrainingConfig,
) -> Result<TaskSplit> {
    let def = task_def(task_id)?;
    let n_cluster = def.n_cluster;
    for rec in corpus {
        if rec.class_label >= n_cluster {
            return Err(Error::LabelOutOfRange {
                label: rec.class_label,
                n_classes: n_cluster,
            });
        }
    }

    // Resolve "all conditions" task definitions against the corpus.
    let mut all_conds: Vec<String> = corpus.iter().map(|r| r.condition_tag.clone()).collect();
    all_conds.sort();
    all_conds.dedup();
    if all_conds.is_empty() {
        return Err(Error::InvalidArgument("build_task: empty corpus".into()));
    }
    let resolve = |c: &[String]| {
        if c.is_empty() {
            all_conds.clone()
        } else {
            c.to_vec()
        }
    };
    let sup_conds = resolve(&def.sup_conds);
    let unsup_conds = resolve(&def.unsup_conds);
    let test_conds = resolve(&def.test_conds);

    // Per-class counts for each split.
    let (n_sp, n_un) = if def.unsupervised_only {
        (0, config.n_un)
    } else if def.fraction_labeled || config.label_fraction > 0.0 {
        let frac = if config.label_fraction > 0.0 {
            config.label_fraction
        } else {
            0.01
        };
        let pool = config.n_un;
        let labeled = ((pool as f64 * frac).round() as usize).clamp(1, pool);
        (labeled, pool - labeled)
    } else {
        (config.n_sp, config.n_un)
    };
    let n_test = if def.unsupervised_only { 0 } else { config.n_test };

    // Accumulate per-(class, condition) needs: [supervised, unsupervised, test].
    let mut needs: BTreeMap<(usize, String), [usize; 3]> = BTreeMap::new();
    let mut add_needs = |split: usize, count: usize, conds: &[String]| {
        if count == 0 {
            return;
        }
        let quotas = distribute(count, conds.len());
        for class in 0..n_cluster {
            for (cond, &q) in conds.iter().zip(&quotas) {
                if q > 0 {
                    needs.entry((class, cond.clone())).or_default()[split] += q;
                }
            }
        }
    };
    add_needs(0, n_sp, &sup_conds);
    add_needs(1, n_un, &unsup_conds);
    add_needs(2, n_test, &test_conds);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut supervised = Vec::new();
    let mut unsupervised = Vec::new();
    let mut test = Vec::new();

    for ((class, cond), need) in &needs {
        let records: Vec<&RawRecord> = corpus
            .iter()
            .filter(|r| r.class_label == *class && r.condition_tag == *cond)
            .collect();
        if records.is_empty() {
            return Err(Error::MissingCoverage {
                task: def.id.clone(),
                class: *class,
                condition: cond.clone(),
            });
        }
        let total: usize = need.iter().sum();

        // Shrink the stride until the pool can supply `total` windows.
        let mut stride = config.stride;
        loop {
            let capacity: usize = records
                .iter()
                .map(|r| segment_count(r.samples.len(), config.window, stride))
                .sum();
            if capacity >= total {
                break;
            }
            if stride == 1 {
                return Err(Error::InvalidArgument(format!(
                    "task {}: class {class} condition {cond}: need {total} windows \
                     but records supply only {capacity} even at stride 1",
                    def.id
                )));
            }
            stride = (stride / 2).max(1);
        }

        // Enumerate all window slots, shuffle, then carve the three splits
        // off the front — windows are never shared between splits.
        let mut slots: Vec<(usize, usize)> = Vec::new();
        for (ri, rec) in records.iter().enumerate() {
            for wi in 0..segment_count(rec.samples.len(), config.window, stride) {
                slots.push((ri, wi * stride));
            }
        }
        slots.shuffle(&mut rng);

        let mut cursor = 0;
        for (split, &count) in need.iter().enumerate() {
            for &(ri, start) in &slots[cursor..cursor + count] {
                let window = &records[ri].samples[start..start + config.window];
                let spectrum = fft_preprocess(window)?;
                let sample = SpectrumSample {
                    spectrum,
                    label: Some(*class),
                    condition_tag: cond.clone(),
                };
                match split {
                    0 => supervised.push(sample),
                    1 => unsupervised.push(sample),
                    _ => test.push(sample),
                }
            }
            cursor += count;
        }
    }

    Ok(TaskSplit {
        supervised,
        unsupervised,
        test,
        n_cluster,
    })
}
