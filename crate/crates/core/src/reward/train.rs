use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dot, margin_loss, norm, score, RewardHead};
use crate::error::{Error, Result};

/// Which side of the hinge the loss penalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    /// `max(0, s− − s+ + m)`: the chosen sample must outscore the rejected one.
    #[default]
    Corrected,
    /// `max(0, s+ − s− + m)`, kept for replication experiments only.
    AsPrinted,
}

impl LossForm {
    pub fn loss(&self, s_plus: f64, s_minus: f64, m: f64) -> f64 {
        match self {
            LossForm::Corrected => margin_loss(s_plus, s_minus, m),
            LossForm::AsPrinted => margin_loss(s_minus, s_plus, m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub max_steps: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub margin: f64,
    pub aug_prob: f64,
    pub rng_seed: u64,
    pub loss_form: LossForm,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            max_steps: 100,
            batch_size: 32,
            weight_decay: 0.2,
            learning_rate: 1e-3,
            margin: 1e-2,
            aug_prob: 0.5,
            rng_seed: 0,
            loss_form: LossForm::Corrected,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate", "must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::validation("weight_decay", "must be non-negative"));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::validation("margin", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.aug_prob) {
            return Err(Error::validation("aug_prob", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Embeddings for one preference: chosen and rejected image embeddings and
/// the combined text embedding of the description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub chosen: Vec<f64>,
    pub rejected: Vec<f64>,
    pub text: Vec<f64>,
}

/// All candidate embeddings sampled for one description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGroup {
    pub text: Vec<f64>,
    pub candidates: Vec<Vec<f64>>,
}

/// Automatically labeled pairs drawn from whole candidate groups. Labels
/// come from a fixed scorer and are frozen at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPool {
    groups: Vec<SyntheticGroup>,
    scores: Vec<Vec<f64>>,
}

impl SyntheticPool {
    /// Scores every candidate with `labeler`. Groups with fewer than two
    /// distinct scores cannot yield a pair and are dropped.
    pub fn new(groups: Vec<SyntheticGroup>, labeler: &RewardHead) -> Result<Self> {
        let mut kept = Vec::new();
        let mut scores = Vec::new();
        for g in groups {
            let s = g
                .candidates
                .iter()
                .map(|c| score(c, &g.text, labeler))
                .collect::<Result<Vec<f64>>>()?;
            if s.iter().any(|x| *x != s[0]) {
                kept.push(g);
                scores.push(s);
            }
        }
        Ok(SyntheticPool { groups: kept, scores })
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    /// Two distinct candidates of a random group, ordered by frozen score.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TrainingPair {
        let gi = rng.random_range(0..self.groups.len());
        let (g, s) = (&self.groups[gi], &self.scores[gi]);
        loop {
            let a = rng.random_range(0..g.candidates.len());
            let b = rng.random_range(0..g.candidates.len());
            if s[a] == s[b] {
                continue;
            }
            let (hi, lo) = if s[a] > s[b] { (a, b) } else { (b, a) };
            return TrainingPair {
                chosen: g.candidates[hi].clone(),
                rejected: g.candidates[lo].clone(),
                text: g.text.clone(),
            };
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSlot {
    pub pair: TrainingPair,
    pub synthetic: bool,
}

/// Each slot independently comes from the synthetic pool with probability
/// `aug_prob`, otherwise from the designer pairs.
pub fn sample_training_batch<R: Rng + ?Sized>(
    designer: &[TrainingPair],
    synthetic: &SyntheticPool,
    cfg: &TrainerConfig,
    rng: &mut R,
) -> Result<Vec<BatchSlot>> {
    if designer.is_empty() && cfg.aug_prob < 1.0 {
        return Err(Error::Config("no designer pairs to train on".into()));
    }
    if synthetic.is_empty() && cfg.aug_prob > 0.0 {
        return Err(Error::Config("aug_prob > 0 requires a non-empty synthetic pool".into()));
    }
    Ok((0..cfg.batch_size)
        .map(|_| {
            if cfg.aug_prob > 0.0 && rng.random_bool(cfg.aug_prob) {
                BatchSlot {
                    pair: synthetic.sample(rng),
                    synthetic: true,
                }
            } else {
                BatchSlot {
                    pair: designer[rng.random_range(0..designer.len())].clone(),
                    synthetic: false,
                }
            }
        })
        .collect())
}

/// Score and `∂s/∂u` at `u = W·x`.
fn score_and_grad_u(head: &RewardHead, x: &[f64], t_hat: &[f64]) -> Result<(f64, Vec<f64>)> {
    let u = head.apply(x);
    let un = norm(&u);
    if !(un.is_finite() && un > 0.0) {
        return Err(Error::Numeric("projected embedding has zero or non-finite norm".into()));
    }
    let c = dot(&u, t_hat);
    let s = head.tau * c / un;
    // ∂s/∂u = τ (t̂ − (u·t̂) u / ‖u‖²) / ‖u‖
    let grad = t_hat
        .iter()
        .zip(&u)
        .map(|(t, ui)| head.tau * (t - c * ui / (un * un)) / un)
        .collect();
    Ok((s, grad))
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::Numeric("text embedding has zero or non-finite norm".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Mean batch loss and its gradient with respect to the head weights.
pub fn batch_loss_and_grad(head: &RewardHead, batch: &[TrainingPair], margin: f64, form: LossForm) -> Result<(f64, Vec<f64>)> {
    let d = head.dimension;
    let mut grad = vec![0.0; d * d];
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for p in batch {
        let t_hat = unit(&p.text)?;
        let (sp, gp) = score_and_grad_u(head, &p.chosen, &t_hat)?;
        let (sm, gm) = score_and_grad_u(head, &p.rejected, &t_hat)?;
        let loss = form.loss(sp, sm, margin);
        total += loss;
        if loss > 0.0 {
            // Corrected: ∂L/∂s+ = −1, ∂L/∂s− = +1; the printed form flips both.
            let sign = match form {
                LossForm::Corrected => 1.0,
                LossForm::AsPrinted => -1.0,
            };
            for i in 0..d {
                let (a, b) = (-sign * scale * gp[i], sign * scale * gm[i]);
                let row = &mut grad[i * d..(i + 1) * d];
                for ((g, c), r) in row.iter_mut().zip(&p.chosen).zip(&p.rejected) {
                    *g += a * c + b * r;
                }
            }
        }
    }
    Ok((total * scale, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub mean_loss: f64,
    pub synthetic_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub head: RewardHead,
    pub trace: Vec<TraceRow>,
}

impl TrainOutcome {
    /// `step,mean_loss,synthetic_fraction`
    pub fn trace_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.trace {
            w.serialize(row).map_err(|e| Error::InvalidInput(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Runs exactly `cfg.max_steps` steps of SGD with decoupled weight decay on
/// the mean batch margin loss. Only the head weights change.
pub fn train(head: &RewardHead, designer: &[TrainingPair], synthetic: &SyntheticPool, cfg: &TrainerConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    head.validate()?;
    let d = head.dimension;
    for p in designer {
        if p.chosen.len() != d || p.rejected.len() != d || p.text.len() != d {
            return Err(Error::Config(format!("training pair dimension differs from head dimension {d}")));
        }
    }
    let mut head = head.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut trace = Vec::with_capacity(cfg.max_steps);
    for step in 0..cfg.max_steps {
        let slots = sample_training_batch(designer, synthetic, cfg, &mut rng)?;
        let synthetic_fraction = slots.iter().filter(|s| s.synthetic).count() as f64 / slots.len() as f64;
        let pairs: Vec<TrainingPair> = slots.into_iter().map(|s| s.pair).collect();
        let (loss, grad) = batch_loss_and_grad(&head, &pairs, cfg.margin, cfg.loss_form)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
        for (w, g) in head.weights.iter_mut().zip(&grad) {
            *w = *w * decay - cfg.learning_rate * g;
        }
        trace.push(TraceRow {
            step,
            mean_loss: loss,
            synthetic_fraction,
        });
    }
    head.trained_steps += cfg.max_steps as u64;
    head.config = Some(cfg.clone());
    Ok(TrainOutcome { head, trace })
}
