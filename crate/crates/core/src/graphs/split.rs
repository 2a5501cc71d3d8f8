use super::Masks;
use rand::seq::SliceRandom;
use rand::Rng;

/// Per-class fractions assigned to train and validation; the rest is test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.2,
            val: 0.4,
        }
    }
}

/// Stratified train/val/test split.
///
/// Every class with at least one node contributes at least one training
/// node. Each mask is returned sorted.
pub fn stratified_split(
    labels: &[usize],
    num_classes: usize,
    fractions: SplitFractions,
    rng: &mut impl Rng,
) -> Masks {
    let mut masks = Masks::default();
    for c in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(rng);
        let n = members.len();
        let n_train = ((fractions.train * n as f64).round() as usize).clamp(1, n);
        let n_val = ((fractions.val * n as f64).round() as usize).min(n - n_train);
        masks.train.extend_from_slice(&members[..n_train]);
        masks.val.extend_from_slice(&members[n_train..n_train + n_val]);
        masks.test.extend_from_slice(&members[n_train + n_val..]);
    }
    masks.train.sort_unstable();
    masks.val.sort_unstable();
    masks.test.sort_unstable();
    masks
}
