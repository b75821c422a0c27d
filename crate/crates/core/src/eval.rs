//! Evaluation metrics for unlearning runs: retain/forget accuracy, output
//! entropy, a logistic-regression membership-inference attack, the Wilcoxon
//! signed-rank test, and wall-clock capture.
//!
//! All metrics are pure reads of frozen models and datasets, so they are
//! safe to evaluate in parallel across seeds and methods. Lower MIA is not
//! automatically better: the target is the *retrained* model's score — an
//! unlearner that overshoots it leaks "this point was deleted" instead of
//! membership.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::seeding;

/// Probabilities below this are clamped before taking logs, capping the
/// per-sample cross-entropy at about 27.6 instead of overflowing to ∞.
pub const LOSS_PROB_FLOOR: f64 = 1e-12;

/// Full-batch gradient-descent schedule for the attack's logistic
/// regression. 1-D standardized features converge long before this.
const ATTACK_ITERS: usize = 500;
const ATTACK_LR: f64 = 0.5;

/// A feature spread below this means every loss in the attack's training
/// pool is numerically identical: the attack degenerates.
const ATTACK_MIN_STD: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Accuracy and per-sample losses
// ---------------------------------------------------------------------------

/// Fraction of argmax-correct predictions (ties resolve toward the lowest
/// class index, as everywhere in this crate).
pub fn accuracy(model: &Model, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("accuracy over an empty dataset is undefined".into()));
    }
    let mut hits = 0usize;
    for i in 0..data.len() {
        if model.predict_class(&data.inputs[i])? == data.labels[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Per-sample cross-entropy `−ln p_y` of the true labels under the model,
/// with probabilities floored at [`LOSS_PROB_FLOOR`].
pub fn per_sample_ce_losses(model: &Model, data: &LabeledDataset) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let probs = model.predict_proba(&data.inputs[i])?;
        let y = data.labels[i];
        let p = probs.get(y).copied().ok_or_else(|| {
            Error::Index(format!("label {y} out of range for {} outputs", probs.len()))
        })?;
        losses.push(-p.max(LOSS_PROB_FLOOR).ln());
    }
    Ok(losses)
}

// ---------------------------------------------------------------------------
// Output entropy
// ---------------------------------------------------------------------------

/// Shannon entropy `H = −Σᵢ pᵢ ln pᵢ` (natural log, `0·ln 0 := 0`) of the
/// model's output distribution for every sample, clamped into `[0, ln c]`
/// against round-off.
pub fn output_entropy(model: &Model, data: &LabeledDataset) -> Result<Vec<f64>> {
    let cap = (model.spec.classes as f64).ln();
    let mut out = Vec::with_capacity(data.len());
    for x in &data.inputs {
        let probs = model.predict_proba(x)?;
        let h: f64 = probs.iter().map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 }).sum();
        out.push(h.clamp(0.0, cap));
    }
    Ok(out)
}

/// Mean, median, and raw per-sample entropies of a forget set.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EntropySummary {
    pub mean: f64,
    pub median: f64,
    pub samples: Vec<f64>,
}

impl EntropySummary {
    /// Summarizes a nonempty per-sample entropy list. The median averages
    /// the two middle order statistics for even lengths.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("entropy summary needs at least one sample".into()));
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let mut sorted = samples.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("entropies are finite"));
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            (sorted[mid - 1] + sorted[mid]) / 2.0
        };
        Ok(Self { mean, median, samples })
    }
}

// ---------------------------------------------------------------------------
// Membership-inference attack
// ---------------------------------------------------------------------------

/// The attack: a logistic regression over the scalar per-sample loss,
/// decision threshold 0.5. Features are standardized by the training pool's
/// mean and spread; `degenerate` marks a pool whose losses were all
/// identical (the attack then has no signal and predicts nobody a member).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttackModel {
    pub weight: f64,
    pub bias: f64,
    pub feature_mean: f64,
    pub feature_std: f64,
    pub degenerate: bool,
}

impl AttackModel {
    /// Fits the regression on balanced member/non-member loss samples by
    /// full-batch gradient descent. Balance comes from seeded subsampling of
    /// the larger pool; both pools are sorted first, so the fit depends only
    /// on the loss *multisets*, never on caller ordering.
    pub fn fit(member_losses: &[f64], nonmember_losses: &[f64], seed: u64) -> Result<Self> {
        if member_losses.is_empty() || nonmember_losses.is_empty() {
            return Err(Error::Config("attack pools must be nonempty".into()));
        }
        let k = member_losses.len().min(nonmember_losses.len());
        let mut rng = seeding::stream(seed, "mia-balance");
        let mut balance = |pool: &[f64]| -> Vec<f64> {
            let mut sorted = pool.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("losses are finite"));
            sorted.shuffle(&mut rng);
            sorted.truncate(k);
            sorted
        };
        let members = balance(member_losses);
        let nonmembers = balance(nonmember_losses);

        let all: Vec<f64> = members.iter().chain(&nonmembers).copied().collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let std =
            (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
        if std < ATTACK_MIN_STD {
            return Ok(Self {
                weight: 0.0,
                bias: 0.0,
                feature_mean: mean,
                feature_std: 1.0,
                degenerate: true,
            });
        }

        // (standardized feature, member?) pairs; members first, fixed order.
        let examples: Vec<(f64, f64)> = members
            .iter()
            .map(|&l| ((l - mean) / std, 1.0))
            .chain(nonmembers.iter().map(|&l| ((l - mean) / std, 0.0)))
            .collect();
        let scale = 1.0 / examples.len() as f64;
        let (mut w, mut b) = (0.0, 0.0);
        for _ in 0..ATTACK_ITERS {
            let (mut gw, mut gb) = (0.0, 0.0);
            for &(z, y) in &examples {
                let p = 1.0 / (1.0 + (-(w * z + b)).exp());
                gw += (p - y) * z * scale;
                gb += (p - y) * scale;
            }
            w -= ATTACK_LR * gw;
            b -= ATTACK_LR * gb;
        }
        Ok(Self { weight: w, bias: b, feature_mean: mean, feature_std: std, degenerate: false })
    }

    /// P(member) for one raw loss value.
    #[must_use]
    pub fn member_probability(&self, loss: f64) -> f64 {
        let z = (loss - self.feature_mean) / self.feature_std;
        1.0 / (1.0 + (-(self.weight * z + self.bias)).exp())
    }

    /// Hard decision at threshold 0.5 (strict, so the no-signal attack
    /// classifies non-member).
    #[must_use]
    pub fn classifies_member(&self, loss: f64) -> bool {
        self.member_probability(loss) > 0.5
    }

    /// Fraction of correct member/non-member decisions on held-out losses.
    #[must_use]
    pub fn heldout_accuracy(&self, member_losses: &[f64], nonmember_losses: &[f64]) -> f64 {
        let hits = member_losses.iter().filter(|&&l| self.classifies_member(l)).count()
            + nonmember_losses.iter().filter(|&&l| !self.classifies_member(l)).count();
        hits as f64 / (member_losses.len() + nonmember_losses.len()) as f64
    }
}

/// The attack's verdict on a forget set.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MiaOutcome {
    /// 100 × fraction of forget samples the attack classifies as member.
    pub score: f64,
    /// True when the attack's training pool carried no signal.
    pub degenerate: bool,
    pub attack: AttackModel,
}

/// Exact-equality fingerprints of input vectors, for the disjointness check.
fn input_set(data: &LabeledDataset) -> HashSet<Vec<u64>> {
    data.inputs.iter().map(|x| x.iter().map(|v| v.to_bits()).collect()).collect()
}

/// Membership-inference score of `model` on `forget`: train the attack on
/// per-sample losses of the balanced `member_pool` (data the model saw) vs
/// `nonmember_pool` (data it never saw), then report how many forget
/// samples it still calls member. Pools must be nonempty and share no input
/// with the forget set.
pub fn mia_score(
    model: &Model,
    forget: &LabeledDataset,
    member_pool: &LabeledDataset,
    nonmember_pool: &LabeledDataset,
    attack_seed: u64,
) -> Result<MiaOutcome> {
    if forget.is_empty() {
        return Err(Error::Config("MIA needs a nonempty forget set".into()));
    }
    if member_pool.is_empty() || nonmember_pool.is_empty() {
        return Err(Error::Config("MIA attack pools must be nonempty".into()));
    }
    let forget_set = input_set(forget);
    for (pool, name) in [(member_pool, "member"), (nonmember_pool, "non-member")] {
        if !forget_set.is_disjoint(&input_set(pool)) {
            return Err(Error::Contract(format!(
                "{name} pool shares samples with the forget set"
            )));
        }
    }

    let member_losses = per_sample_ce_losses(model, member_pool)?;
    let nonmember_losses = per_sample_ce_losses(model, nonmember_pool)?;
    let attack = AttackModel::fit(&member_losses, &nonmember_losses, attack_seed)?;

    let forget_losses = per_sample_ce_losses(model, forget)?;
    let members = forget_losses.iter().filter(|&&l| attack.classifies_member(l)).count();
    let score = 100.0 * members as f64 / forget_losses.len() as f64;
    Ok(MiaOutcome { score, degenerate: attack.degenerate, attack })
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test
// ---------------------------------------------------------------------------

/// Result of a two-sided Wilcoxon signed-rank test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WilcoxonResult {
    /// `min(W⁺, W⁻)`, the smaller signed-rank sum.
    pub statistic: f64,
    pub p_two_sided: f64,
    /// Pairs remaining after zero differences are dropped.
    pub n_used: usize,
    /// True when every difference was zero (then `p = 1`).
    pub degenerate: bool,
}

/// Largest n for which the exact null distribution is enumerated; beyond it
/// a normal approximation with continuity and tie corrections takes over.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped; tied absolute differences receive average ranks. Exact
/// p-values (all `2ⁿ` sign assignments) up to [`WILCOXON_EXACT_MAX_N`],
/// normal approximation beyond.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "paired test needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 5 {
        return Err(Error::Config(format!(
            "signed-rank test needs at least 5 pairs, got {}",
            a.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            p_two_sided: 1.0,
            n_used: 0,
            degenerate: true,
        });
    }

    // Average ranks of |d|, held as doubled integers so ties stay exact
    // (the average of a tie group spanning 1-based ranks lo..=hi is
    // (lo+hi)/2, so its double is lo+hi).
    let n = diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).expect("finite"));
    let mut doubled = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && diffs[order[j]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        let doubled_avg = (i + 1 + j) as u64;
        for k in i..j {
            doubled[order[k]] = doubled_avg;
        }
        i = j;
    }

    let w_plus: u64 =
        diffs.iter().zip(&doubled).filter(|(d, _)| **d > 0.0).map(|(_, r)| *r).sum();
    let total: u64 = (n * (n + 1)) as u64;
    let w_small = w_plus.min(total - w_plus);

    let p = if n <= WILCOXON_EXACT_MAX_N {
        wilcoxon_exact_p(&doubled, w_small)
    } else {
        wilcoxon_normal_p(&doubled, w_small, n)
    };
    Ok(WilcoxonResult {
        statistic: w_small as f64 / 2.0,
        p_two_sided: p,
        n_used: n,
        degenerate: false,
    })
}

/// Exact two-sided p: counts of every doubled `W⁺` value over all `2ⁿ` sign
/// assignments via subset-sum dynamic programming, then both tails at
/// `w_small` and its mirror.
fn wilcoxon_exact_p(doubled_ranks: &[u64], w_small: u64) -> f64 {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    for &r in doubled_ranks {
        for w in (r..=total).rev() {
            counts[w as usize] += counts[(w - r) as usize];
        }
    }
    let lo: u64 = counts[..=w_small as usize].iter().sum();
    let hi: u64 = counts[(total - w_small) as usize..].iter().sum();
    let assignments = 2f64.powi(doubled_ranks.len() as i32);
    (((lo + hi) as f64) / assignments).min(1.0)
}

/// Normal approximation with continuity correction and the tie correction
/// `Σ(t³−t)/48` on the variance.
fn wilcoxon_normal_p(doubled_ranks: &[u64], w_small: u64, n: usize) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
    let mut sorted = doubled_ranks.to_vec();
    sorted.sort_unstable();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        var -= (t * t * t - t) / 48.0;
        i = j;
    }
    let w = w_small as f64 / 2.0;
    let z = (w - mean + 0.5) / var.sqrt();
    let phi = 0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2));
    (2.0 * phi).clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Timing and the report
// ---------------------------------------------------------------------------

/// Wall-clock seconds around `f` alone — wrap exactly the unlearning call,
/// not data loading or evaluation.
pub fn time_method<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let value = f()?;
    Ok((value, start.elapsed().as_secs_f64()))
}

/// One method's full evaluation on one benchmark seed.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub seed: u64,
    pub retain_test_accuracy: f64,
    pub forget_accuracy: f64,
    pub mia_score: f64,
    pub mia_degenerate: bool,
    pub entropy_summary: EntropySummary,
    pub runtime_seconds: f64,
}

impl EvalReport {
    /// Checks the documented ranges: fractions in `[0,1]`, MIA in
    /// `[0,100]`, entropies in `[0, ln classes]`, runtime non-negative.
    pub fn validate(&self, classes: usize) -> Result<()> {
        for (label, v) in [
            ("retain_test_accuracy", self.retain_test_accuracy),
            ("forget_accuracy", self.forget_accuracy),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{label} {v} outside [0,1]")));
            }
        }
        if !(0.0..=100.0).contains(&self.mia_score) {
            return Err(Error::Domain(format!("mia_score {} outside [0,100]", self.mia_score)));
        }
        let cap = (classes as f64).ln();
        for &h in &self.entropy_summary.samples {
            if !(0.0..=cap).contains(&h) {
                return Err(Error::Domain(format!("entropy {h} outside [0, {cap}]")));
            }
        }
        if self.runtime_seconds < 0.0 {
            return Err(Error::Domain(format!(
                "runtime_seconds {} is negative",
                self.runtime_seconds
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_blobs, split_forget, ForgetSpec};
    use crate::models::{init_model, train_sgd, ModelSpec, TrainConfig};
    use crate::models::zeroed_model;
    use rand::Rng;

    fn blob_means() -> Vec<Vec<f64>> {
        vec![vec![1.0, 1.0], vec![-1.0, -1.0]]
    }

    #[test]
    fn a_perfect_separator_scores_exactly_one() {
        // Hand-set 1-D sigmoid with a huge weight: sign(x) decides the
        // class, so these points are classified perfectly.
        let mut model = init_model(&ModelSpec::sigmoid1d(0)).unwrap();
        model.set_flat_params(&[50.0, 0.0]).unwrap();
        let data = LabeledDataset::new(
            "separated",
            1,
            2,
            vec![vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]],
            vec![0, 0, 1, 1],
            None,
        )
        .unwrap();
        assert_eq!(accuracy(&model, &data).unwrap(), 1.0);
    }

    #[test]
    fn a_constant_model_scores_the_class_zero_share_under_the_tie_rule() {
        // Zero weights → uniform output everywhere → argmax ties → class 0.
        let model = zeroed_model(&ModelSpec::mlp(2, vec![8], 2, 0).unwrap()).unwrap();
        let data = LabeledDataset::new(
            "balanced",
            2,
            2,
            vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0], vec![-1.0, -2.0]],
            vec![0, 0, 1, 1],
            None,
        )
        .unwrap();
        assert_eq!(accuracy(&model, &data).unwrap(), 0.5);
    }

    #[test]
    fn accuracy_rejects_empty_data_and_is_deterministic() {
        let model = zeroed_model(&ModelSpec::mlp(2, vec![4], 2, 0).unwrap()).unwrap();
        let empty = LabeledDataset::new("empty", 2, 2, vec![], vec![], None).unwrap();
        assert!(matches!(accuracy(&model, &empty), Err(Error::Config(_))));

        let data = make_blobs(40, &blob_means(), 0.3, 1).unwrap();
        let a = accuracy(&model, &data).unwrap();
        let b = accuracy(&model, &data).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn retraining_separates_baseline_and_forget_accuracy() {
        // The benchmark's poles: the baseline still predicts the dropped
        // class, the retrained model cannot.
        let data = make_blobs(100, &blob_means(), 0.3, 30).unwrap();
        let spec = ModelSpec::mlp(2, vec![16], 2, 30).unwrap();
        let mut baseline = init_model(&spec).unwrap();
        train_sgd(&mut baseline, &data, &TrainConfig::default()).unwrap();
        let part = split_forget(&data, &ForgetSpec::FullClass(0)).unwrap();

        let base_df = accuracy(&baseline, &part.forget).unwrap();
        assert!(base_df >= 0.95, "baseline forget accuracy {base_df}");

        let (retrained, _) = crate::unlearn::retrain_oracle(
            &spec,
            &part.retain,
            &TrainConfig::default(),
        )
        .unwrap();
        let re_df = accuracy(&retrained, &part.forget).unwrap();
        assert!(re_df <= 0.05, "retrained forget accuracy {re_df}");
    }

    #[test]
    fn one_hot_outputs_have_exactly_zero_entropy() {
        // sigmoid(±800) saturates to exactly 1.0 / 0.0 in f64, so the
        // output is a true one-hot vector and the 0·ln0 convention kicks in.
        let mut model = init_model(&ModelSpec::sigmoid1d(0)).unwrap();
        model.set_flat_params(&[200.0, 0.0]).unwrap();
        let data =
            LabeledDataset::new("hot", 1, 2, vec![vec![4.0], vec![-4.0]], vec![1, 0], None)
                .unwrap();
        let h = output_entropy(&model, &data).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
    }

    #[test]
    fn uniform_outputs_have_log_c_entropy() {
        let model = zeroed_model(&ModelSpec::small_cnn(10, 0).unwrap()).unwrap();
        let data = LabeledDataset::new(
            "uniform",
            3 * 32 * 32,
            10,
            vec![vec![0.3; 3 * 32 * 32]],
            vec![7],
            None,
        )
        .unwrap();
        let h = output_entropy(&model, &data).unwrap();
        assert!((h[0] - 10f64.ln()).abs() < 1e-12, "entropy {} vs ln 10", h[0]);
    }

    #[test]
    fn entropies_stay_inside_their_bounds_on_a_trained_model() {
        let data = make_blobs(60, &blob_means(), 0.3, 31).unwrap();
        let spec = ModelSpec::mlp(2, vec![16], 2, 31).unwrap();
        let mut model = init_model(&spec).unwrap();
        train_sgd(&mut model, &data, &TrainConfig::default()).unwrap();
        let cap = 2f64.ln();
        for h in output_entropy(&model, &data).unwrap() {
            assert!((0.0..=cap).contains(&h), "entropy {h} outside [0, {cap}]");
        }
    }

    #[test]
    fn entropy_summary_means_and_medians_are_order_statistics() {
        let s = EntropySummary::from_samples(vec![0.4, 0.1, 0.3, 0.2]).unwrap();
        assert!((s.mean - 0.25).abs() < 1e-15);
        assert!((s.median - 0.25).abs() < 1e-15);
        let s = EntropySummary::from_samples(vec![0.5, 0.1, 0.9]).unwrap();
        assert_eq!(s.median, 0.5);
        assert!(EntropySummary::from_samples(vec![]).is_err());
    }

    #[test]
    fn cross_entropy_losses_are_floored_not_infinite() {
        let mut model = init_model(&ModelSpec::sigmoid1d(0)).unwrap();
        model.set_flat_params(&[80.0, 0.0]).unwrap();
        // Label fights a saturated output: p(true) == 0 exactly before the
        // floor.
        let data =
            LabeledDataset::new("wrong", 1, 2, vec![vec![10.0]], vec![0], None).unwrap();
        let losses = per_sample_ce_losses(&model, &data).unwrap();
        assert!(losses[0].is_finite());
        assert!((losses[0] - (-LOSS_PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn attack_separates_well_separated_loss_distributions() {
        // Synthetic-distribution oracle: members cluster near zero loss,
        // non-members far away; held-out attack accuracy must be ≥ 99%.
        let mut rng = seeding::stream(40, "mia");
        let members: Vec<f64> = (0..200).map(|_| rng.gen_range(0.01..0.10)).collect();
        let nonmembers: Vec<f64> = (0..200).map(|_| rng.gen_range(4.0..6.0)).collect();
        let attack = AttackModel::fit(&members[..100], &nonmembers[..100], 7).unwrap();
        assert!(!attack.degenerate);
        let acc = attack.heldout_accuracy(&members[100..], &nonmembers[100..]);
        assert!(acc >= 0.99, "held-out attack accuracy {acc}");
    }

    #[test]
    fn forget_losses_beyond_the_nonmember_range_score_zero() {
        let mut rng = seeding::stream(41, "mia");
        let members: Vec<f64> = (0..100).map(|_| rng.gen_range(0.01..0.10)).collect();
        let nonmembers: Vec<f64> = (0..100).map(|_| rng.gen_range(2.0..3.0)).collect();
        let attack = AttackModel::fit(&members, &nonmembers, 7).unwrap();
        // Forget losses even larger than every non-member loss: the attack
        // must call all of them non-member.
        for loss in [5.0, 8.0, 20.0] {
            assert!(!attack.classifies_member(loss));
        }
    }

    #[test]
    fn degenerate_pools_are_flagged_and_score_nobody_a_member() {
        let attack = AttackModel::fit(&[0.7; 50], &[0.7; 50], 3).unwrap();
        assert!(attack.degenerate);
        assert!(!attack.classifies_member(0.7));
        assert!(!attack.classifies_member(100.0));
    }

    #[test]
    fn mia_score_is_invariant_to_pool_ordering_and_deterministic() {
        let data = make_blobs(120, &blob_means(), 0.3, 42).unwrap();
        let spec = ModelSpec::mlp(2, vec![16], 2, 42).unwrap();
        let mut model = init_model(&spec).unwrap();
        train_sgd(&mut model, &data, &TrainConfig::default()).unwrap();

        // Forget: first 20 samples; member pool: next 60 (seen in
        // training); non-member pool: fresh draws.
        let forget = data.subset(&(0..20).collect::<Vec<_>>()).unwrap();
        let member_idx: Vec<usize> = (20..80).collect();
        let member = data.subset(&member_idx).unwrap();
        let nonmember = make_blobs(60, &blob_means(), 0.3, 43).unwrap();

        let a = mia_score(&model, &forget, &member, &nonmember, 5).unwrap();
        let b = mia_score(&model, &forget, &member, &nonmember, 5).unwrap();
        assert_eq!(a, b);

        // Reverse both pools sample-wise: the score cannot move.
        let rev = |d: &LabeledDataset| {
            let idx: Vec<usize> = (0..d.len()).rev().collect();
            d.subset(&idx).unwrap()
        };
        let c = mia_score(&model, &forget, &rev(&member), &rev(&nonmember), 5).unwrap();
        assert_eq!(a.score, c.score);
        assert!((0.0..=100.0).contains(&a.score));
    }

    #[test]
    fn mia_rejects_pools_that_overlap_the_forget_set() {
        let data = make_blobs(40, &blob_means(), 0.3, 44).unwrap();
        let model = zeroed_model(&ModelSpec::mlp(2, vec![4], 2, 0).unwrap()).unwrap();
        let forget = data.subset(&(0..10).collect::<Vec<_>>()).unwrap();
        let overlapping = data.subset(&(5..30).collect::<Vec<_>>()).unwrap();
        let clean = data.subset(&(10..40).collect::<Vec<_>>()).unwrap();
        assert!(matches!(
            mia_score(&model, &forget, &overlapping, &clean, 0),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            mia_score(&model, &forget, &clean, &overlapping, 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn a_memorizing_model_earns_a_high_mia_score_on_its_train_data() {
        // Members (and the forget set, which was also trained on) sit at
        // low loss; fresh non-members sit higher. The attack should call
        // most forget samples members.
        let data = make_blobs(120, &blob_means(), 0.3, 45).unwrap();
        let spec = ModelSpec::mlp(2, vec![16], 2, 45).unwrap();
        let mut model = init_model(&spec).unwrap();
        train_sgd(&mut model, &data, &TrainConfig::default()).unwrap();

        let forget = data.subset(&(0..20).collect::<Vec<_>>()).unwrap();
        let member = data.subset(&(20..80).collect::<Vec<_>>()).unwrap();
        let nonmember = make_blobs(60, &blob_means(), 1.2, 46).unwrap();
        let outcome = mia_score(&model, &forget, &member, &nonmember, 5).unwrap();
        assert!(
            outcome.score >= 60.0,
            "trained-in forget samples should mostly look like members: {}",
            outcome.score
        );
    }

    // --- Wilcoxon ---

    /// Brute force over all 2ⁿ sign assignments, same doubled-rank
    /// arithmetic as the implementation, as an independent oracle.
    fn brute_force_p(diffs: &[f64]) -> f64 {
        let n = diffs.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).unwrap());
        let mut doubled = vec![0u64; n];
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && diffs[order[j]].abs() == diffs[order[i]].abs() {
                j += 1;
            }
            for k in i..j {
                doubled[order[k]] = (i + 1 + j) as u64;
            }
            i = j;
        }
        let w_plus: u64 =
            diffs.iter().zip(&doubled).filter(|(d, _)| **d > 0.0).map(|(_, r)| *r).sum();
        let total: u64 = (n * (n + 1)) as u64;
        let w_small = w_plus.min(total - w_plus);

        let mut tail = 0u64;
        for mask in 0u32..(1 << n) {
            let w: u64 = (0..n).filter(|&k| mask & (1 << k) != 0).map(|k| doubled[k]).sum();
            if w <= w_small || w >= total - w_small {
                tail += 1;
            }
        }
        (tail as f64 / 2f64.powi(n as i32)).min(1.0)
    }

    #[test]
    fn identical_samples_give_p_one_with_a_degeneracy_flag() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r = wilcoxon_signed_rank(&a, &a).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_two_sided, 1.0);
        assert_eq!(r.n_used, 0);
    }

    #[test]
    fn an_extreme_shift_is_decisively_significant() {
        let a: Vec<f64> = (0..20).map(|i| i as f64 * 0.01).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 10.0).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(r.p_two_sided < 0.01, "p = {}", r.p_two_sided);
        assert_eq!(r.statistic, 0.0);
    }

    #[test]
    fn exact_p_matches_the_brute_force_enumeration_on_fixed_vectors() {
        let a = [2.1, -0.4, 3.3, 1.0, -2.2, 0.7, 5.0, -1.1];
        let b = [1.0, 0.2, 3.0, 2.5, -2.0, 0.7, 4.1, -3.0];
        let diffs: Vec<f64> =
            a.iter().zip(&b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.n_used, diffs.len());
        assert_eq!(r.p_two_sided, brute_force_p(&diffs));
    }

    #[test]
    fn exact_p_matches_brute_force_on_random_integer_data() {
        // Integer-valued pairs manufacture zero differences and rank ties,
        // hitting every branch of the tie handling.
        let mut rng = seeding::stream(50, "wilcoxon");
        for case in 0..60 {
            let n = 5 + (case % 6); // 5..=10
            let a: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..6))).collect();
            let b: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..6))).collect();
            let diffs: Vec<f64> =
                a.iter().zip(&b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
            let r = wilcoxon_signed_rank(&a, &b).unwrap();
            if diffs.is_empty() {
                assert!(r.degenerate);
                assert_eq!(r.p_two_sided, 1.0);
            } else {
                assert_eq!(
                    r.p_two_sided,
                    brute_force_p(&diffs),
                    "case {case}: a={a:?} b={b:?}"
                );
            }
        }
    }

    #[test]
    fn normal_approximation_tracks_the_exact_tail_just_past_the_cutoff() {
        // At n = 26..30 the implementation switches to the approximation;
        // the exact DP is still cheap there, so use it as the oracle.
        let mut rng = seeding::stream(51, "wilcoxon");
        for n in [26usize, 28, 30] {
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..0.5)).collect();
            let r = wilcoxon_signed_rank(&a, &b).unwrap();

            let diffs: Vec<f64> =
                a.iter().zip(&b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
            let m = diffs.len();
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).unwrap());
            let doubled: Vec<u64> = {
                let mut d = vec![0u64; m];
                for (pos, &idx) in order.iter().enumerate() {
                    d[idx] = (2 * (pos + 1)) as u64; // continuous data: no ties
                }
                d
            };
            let w_plus: u64 = diffs
                .iter()
                .zip(&doubled)
                .filter(|(d, _)| **d > 0.0)
                .map(|(_, r)| *r)
                .sum();
            let total: u64 = (m * (m + 1)) as u64;
            let exact = wilcoxon_exact_p(&doubled, w_plus.min(total - w_plus));
            assert!(
                (r.p_two_sided - exact).abs() < 0.02,
                "n={n}: approx {} vs exact {exact}",
                r.p_two_sided
            );
        }
    }

    #[test]
    fn wilcoxon_rejects_mismatched_or_tiny_samples() {
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0, 2.0], &[2.0, 1.0]),
            Err(Error::Config(_))
        ));
    }

    // --- Timing and report ---

    #[test]
    fn timing_a_no_op_costs_less_than_a_millisecond() {
        let ((), secs) = time_method(|| Ok(())).unwrap();
        assert!(secs < 1e-3, "no-op took {secs}s");
        assert!(secs >= 0.0);
    }

    #[test]
    fn report_validation_enforces_the_documented_ranges() {
        let good = EvalReport {
            method: "jit".into(),
            seed: 0,
            retain_test_accuracy: 0.97,
            forget_accuracy: 0.02,
            mia_score: 48.0,
            mia_degenerate: false,
            entropy_summary: EntropySummary::from_samples(vec![0.1, 0.6]).unwrap(),
            runtime_seconds: 0.3,
        };
        good.validate(2).unwrap();

        let mut bad = good.clone();
        bad.mia_score = 101.0;
        assert!(bad.validate(2).is_err());

        let mut bad = good.clone();
        bad.forget_accuracy = -0.1;
        assert!(bad.validate(2).is_err());

        let mut bad = good.clone();
        bad.entropy_summary.samples = vec![5.0];
        assert!(bad.validate(2).is_err());

        let mut bad = good;
        bad.runtime_seconds = -1.0;
        assert!(bad.validate(2).is_err());
    }
}
