//! Blind pairwise evaluation of generators: match scheduling, online Elo
//! with bootstrap intervals, win-rate matrices, and agreement between
//! rater groups.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Provenance;
use crate::error::{Error, Result};
use crate::hash::seed_from_parts;
use crate::ids::{DescriptionId, PairId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Battle {
    pub model_a: String,
    pub model_b: String,
    pub description_id: DescriptionId,
    pub winner: Winner,
    pub judge_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl Battle {
    pub fn validate(&self) -> Result<()> {
        if self.model_a.trim().is_empty() || self.model_b.trim().is_empty() {
            return Err(Error::validation("model_a", "model identifiers must not be empty"));
        }
        if self.model_a == self.model_b {
            return Err(Error::validation("model_b", "a model cannot battle itself"));
        }
        if self.judge_id.trim().is_empty() {
            return Err(Error::validation("judge_id", "must not be empty"));
        }
        Ok(())
    }

    pub fn winner_model(&self) -> &str {
        match self.winner {
            Winner::A => &self.model_a,
            Winner::B => &self.model_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatingConfig {
    pub initial: f64,
    pub scale: f64,
    pub base: f64,
    pub k_factor: f64,
    pub rounds: usize,
    pub rng_seed: u64,
}

impl Default for RatingConfig {
    fn default() -> Self {
        RatingConfig {
            initial: 1000.0,
            scale: 400.0,
            base: 10.0,
            k_factor: 4.0,
            rounds: 1000,
            rng_seed: 42,
        }
    }
}

impl RatingConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("initial", self.initial),
            ("scale", self.scale),
            ("base", self.base),
            ("k_factor", self.k_factor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(field, "must be positive"));
            }
        }
        if self.base == 1.0 {
            return Err(Error::validation("base", "must not be 1"));
        }
        if self.rounds == 0 {
            return Err(Error::validation("rounds", "must be at least 1"));
        }
        Ok(())
    }
}

pub type Ratings = BTreeMap<String, f64>;

fn models_of<'a>(battles: impl IntoIterator<Item = &'a Battle>) -> BTreeSet<&'a str> {
    battles
        .into_iter()
        .flat_map(|b| [b.model_a.as_str(), b.model_b.as_str()])
        .collect()
}

/// One online update; returns the new `(r_a, r_b)`.
pub fn elo_update(ra: f64, rb: f64, winner: Winner, cfg: &RatingConfig) -> (f64, f64) {
    let ea = 1.0 / (1.0 + cfg.base.powf((rb - ra) / cfg.scale));
    let eb = 1.0 / (1.0 + cfg.base.powf((ra - rb) / cfg.scale));
    let sa = match winner {
        Winner::A => 1.0,
        Winner::B => 0.0,
    };
    (ra + cfg.k_factor * (sa - ea), rb + cfg.k_factor * (1.0 - sa - eb))
}

fn run_elo<'a>(models: &BTreeSet<&str>, battles: impl Iterator<Item = &'a Battle>, cfg: &RatingConfig) -> Ratings {
    let mut ratings: Ratings = models.iter().map(|m| (m.to_string(), cfg.initial)).collect();
    for b in battles {
        let ra = ratings[b.model_a.as_str()];
        let rb = ratings[b.model_b.as_str()];
        let (na, nb) = elo_update(ra, rb, b.winner, cfg);
        ratings.insert(b.model_a.clone(), na);
        ratings.insert(b.model_b.clone(), nb);
    }
    ratings
}

/// Online Elo over `battles` in order. Every model that appears starts at
/// `cfg.initial`; models that never battled are absent.
pub fn elo_sequence(battles: &[Battle], cfg: &RatingConfig) -> Ratings {
    run_elo(&models_of(battles), battles.iter(), cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRating {
    pub model: String,
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Ratings from `cfg.rounds` resamples (with replacement) of the battle
/// log, each replayed in its random draw order. Reports the median and the
/// 2.5/97.5 percentiles per model, highest median first.
pub fn bootstrap_ratings(battles: &[Battle], cfg: &RatingConfig) -> Result<Vec<ModelRating>> {
    cfg.validate()?;
    if battles.is_empty() {
        return Err(Error::validation("battles", "at least one battle is required"));
    }
    let models = models_of(battles);
    let rounds: Vec<Ratings> = (0..cfg.rounds)
        .into_par_iter()
        .map(|round| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed_from_parts(&[&cfg.rng_seed.to_le_bytes(), &(round as u64).to_le_bytes()]));
            let sample = (0..battles.len()).map(|_| &battles[rng.random_range(0..battles.len())]);
            run_elo(&models, sample, cfg)
        })
        .collect();
    let mut out: Vec<ModelRating> = models
        .iter()
        .map(|m| {
            let mut values: Vec<f64> = rounds.iter().map(|r| r[*m]).collect();
            values.sort_by(f64::total_cmp);
            ModelRating {
                model: m.to_string(),
                median: quantile(&values, 0.5),
                ci_low: quantile(&values, 0.025),
                ci_high: quantile(&values, 0.975),
            }
        })
        .collect();
    out.sort_by(|a, b| b.median.total_cmp(&a.median).then_with(|| a.model.cmp(&b.model)));
    Ok(out)
}

/// Pairwise win rates. `rates[i][j]` is the fraction of battles between
/// models `i` and `j` that `i` won, or `None` if they never met.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateMatrix {
    pub models: Vec<String>,
    pub rates: Vec<Vec<Option<f64>>>,
    /// Mean over each row's present cells.
    pub average: Vec<Option<f64>>,
}

impl WinRateMatrix {
    fn index(&self, model: &str) -> Option<usize> {
        self.models.iter().position(|m| m == model)
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        self.rates[self.index(a)?][self.index(b)?]
    }

    pub fn average_of(&self, model: &str) -> Option<f64> {
        self.average[self.index(model)?]
    }
}

pub fn win_rate_matrix(battles: &[Battle]) -> WinRateMatrix {
    let models: Vec<String> = models_of(battles).into_iter().map(str::to_owned).collect();
    let n = models.len();
    let idx: BTreeMap<&str, usize> = models.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
    let mut wins = vec![vec![0u64; n]; n];
    for b in battles {
        let (a, c) = (idx[b.model_a.as_str()], idx[b.model_b.as_str()]);
        match b.winner {
            Winner::A => wins[a][c] += 1,
            Winner::B => wins[c][a] += 1,
        }
    }
    let rates: Vec<Vec<Option<f64>>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let games = wins[i][j] + wins[j][i];
                    (i != j && games > 0).then(|| wins[i][j] as f64 / games as f64)
                })
                .collect()
        })
        .collect();
    let average = rates
        .iter()
        .map(|row| {
            let present: Vec<f64> = row.iter().flatten().copied().collect();
            (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
        })
        .collect();
    WinRateMatrix { models, rates, average }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingReport {
    pub battles: usize,
    pub ratings: Vec<ModelRating>,
    pub win_rates: WinRateMatrix,
    pub config: RatingConfig,
}

pub fn rating_report(battles: &[Battle], cfg: &RatingConfig) -> Result<RatingReport> {
    Ok(RatingReport {
        battles: battles.len(),
        ratings: bootstrap_ratings(battles, cfg)?,
        win_rates: win_rate_matrix(battles),
        config: cfg.clone(),
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

/// `model,median,ci_low,ci_high`
pub fn ratings_csv(ratings: &[ModelRating]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in ratings {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Header row of model names; absent cells are empty.
pub fn matrix_csv(m: &WinRateMatrix) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model".to_string()];
    header.extend(m.models.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (model, row) in m.models.iter().zip(&m.rates) {
        let mut rec = vec![model.clone()];
        rec.extend(row.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_battles(battles: &[Battle], out: &mut impl Write) -> Result<()> {
    for b in battles {
        serde_json::to_writer(&mut *out, b)?;
        out.write_all(b"\n").map_err(|e| Error::io("<battles>", e))?;
    }
    Ok(())
}

pub fn read_battles(input: impl BufRead) -> Result<Vec<Battle>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<battles>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let b: Battle = serde_json::from_str(&line).map_err(|e| Error::Integrity {
            record: format!("line {}", n + 1),
            message: e.to_string(),
        })?;
        b.validate()?;
        out.push(b);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    #[default]
    Uniform,
    /// Uniform over the least-played pairings.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledMatch {
    pub model_a: String,
    pub model_b: String,
    pub description_id: DescriptionId,
    /// Whether `model_a` is shown on the left.
    pub a_on_left: bool,
}

/// Picks a random unordered pair of distinct models and a description.
pub fn schedule_match<R: Rng + ?Sized>(
    models: &[String],
    descriptions: &[DescriptionId],
    history: &[Battle],
    mode: ScheduleMode,
    rng: &mut R,
) -> Result<ScheduledMatch> {
    let distinct: BTreeSet<&String> = models.iter().collect();
    if distinct.len() < 2 || distinct.len() != models.len() {
        return Err(Error::Config("at least two distinct models are required".into()));
    }
    if descriptions.is_empty() {
        return Err(Error::Config("at least one description is required".into()));
    }
    let n = models.len();
    let (i, j) = match mode {
        ScheduleMode::Uniform => {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        }
        ScheduleMode::Balanced => {
            let played = |a: &str, b: &str| {
                history
                    .iter()
                    .filter(|h| (h.model_a == a && h.model_b == b) || (h.model_a == b && h.model_b == a))
                    .count()
            };
            let pairs: Vec<(usize, usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .map(|(i, j)| (i, j, played(&models[i], &models[j])))
                .collect();
            let least = pairs.iter().map(|p| p.2).min().expect("at least one pairing");
            let open: Vec<_> = pairs.into_iter().filter(|p| p.2 == least).collect();
            let (i, j, _) = open[rng.random_range(0..open.len())];
            if rng.random_bool(0.5) {
                (i, j)
            } else {
                (j, i)
            }
        }
    };
    Ok(ScheduledMatch {
        model_a: models[i].clone(),
        model_b: models[j].clone(),
        description_id: descriptions[rng.random_range(0..descriptions.len())].clone(),
        a_on_left: rng.random_bool(0.5),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaterChoice {
    Chosen,
    Rejected,
}

/// An independent rater's judgment of an existing preference pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementRecord {
    pub pair_id: PairId,
    pub stratum: Provenance,
    pub choice: RaterChoice,
    #[serde(default)]
    pub rater_id: String,
}

impl AgreementRecord {
    pub fn validate(&self) -> Result<()> {
        if self.stratum == Provenance::Synthetic {
            return Err(Error::validation("stratum", "must be one of the four feedback interfaces"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub agree: usize,
    pub total: usize,
    /// Rounded to one decimal place.
    pub percent: f64,
}

impl Agreement {
    fn new(agree: usize, total: usize) -> Self {
        let percent = (agree as f64 / total as f64 * 1000.0).round() / 10.0;
        Agreement { agree, total, percent }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub overall: Option<Agreement>,
    /// Strata with no records are absent.
    pub strata: BTreeMap<Provenance, Agreement>,
}

pub fn agreement(records: &[AgreementRecord]) -> AgreementReport {
    let mut tally: BTreeMap<Provenance, (usize, usize)> = BTreeMap::new();
    for r in records {
        let t = tally.entry(r.stratum).or_default();
        t.1 += 1;
        if r.choice == RaterChoice::Chosen {
            t.0 += 1;
        }
    }
    let (agree, total) = tally.values().fold((0, 0), |acc, t| (acc.0 + t.0, acc.1 + t.1));
    AgreementReport {
        overall: (total > 0).then(|| Agreement::new(agree, total)),
        strata: tally.into_iter().map(|(k, (a, t))| (k, Agreement::new(a, t))).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn battle(a: &str, b: &str, w: Winner) -> Battle {
        Battle {
            model_a: a.into(),
            model_b: b.into(),
            description_id: DescriptionId::new("d"),
            winner: w,
            judge_id: "j".into(),
            timestamp: 0,
        }
    }

    #[test]
    fn single_battle_from_equal_ratings() {
        let r = elo_sequence(&[battle("a", "b", Winner::A)], &RatingConfig::default());
        assert_eq!(r["a"], 1002.0);
        assert_eq!(r["b"], 998.0);
    }

    #[test]
    fn no_battles() {
        assert!(elo_sequence(&[], &RatingConfig::default()).is_empty());
        assert!(bootstrap_ratings(&[], &RatingConfig::default()).is_err());
    }

    #[test]
    fn self_battle_rejected() {
        assert!(battle("a", "a", Winner::A).validate().is_err());
    }

    #[test]
    fn win_rate_counting() {
        let log = [battle("a", "b", Winner::A), battle("b", "a", Winner::B), battle("a", "b", Winner::B)];
        let m = win_rate_matrix(&log);
        assert!((m.get("a", "b").unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.get("b", "a").unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.get("a", "a"), None);
        let m = win_rate_matrix(&[battle("a", "b", Winner::A), battle("b", "c", Winner::A)]);
        assert_eq!(m.get("a", "c"), None);
        assert_eq!(m.average_of("b"), Some(0.5));
    }

    #[test]
    fn one_round_median_is_that_round() {
        let log = [battle("a", "b", Winner::A), battle("a", "b", Winner::B), battle("b", "c", Winner::A)];
        let cfg = RatingConfig {
            rounds: 1,
            ..RatingConfig::default()
        };
        let r = bootstrap_ratings(&log, &cfg).unwrap();
        for m in &r {
            assert_eq!(m.median, m.ci_low);
            assert_eq!(m.median, m.ci_high);
        }
    }

    #[test]
    fn quantiles_interpolate() {
        let d = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&d, 0.5), 2.5);
        assert_eq!(quantile(&d, 0.0), 1.0);
        assert_eq!(quantile(&d, 1.0), 4.0);
        assert!((quantile(&d, 0.025) - 1.075).abs() < 1e-12);
    }

    #[test]
    fn agreement_rounding_and_absent_strata() {
        let rec = |s, c| AgreementRecord {
            pair_id: PairId::new("p"),
            stratum: s,
            choice: c,
            rater_id: String::new(),
        };
        let records: Vec<_> = (0..4)
            .map(|i| rec(Provenance::Ranking, if i < 3 { RaterChoice::Chosen } else { RaterChoice::Rejected }))
            .collect();
        let r = agreement(&records);
        assert_eq!(r.overall.unwrap().percent, 75.0);
        assert!(!r.strata.contains_key(&Provenance::Sketching));
        assert!(agreement(&[]).overall.is_none());
    }

    #[test]
    fn schedule_rejects_single_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = [DescriptionId::new("d")];
        assert!(schedule_match(&["m".to_string()], &d, &[], ScheduleMode::Uniform, &mut rng).is_err());
    }

    #[test]
    fn balanced_schedule_prefers_unplayed_pairings() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let models: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let history = [battle("a", "b", Winner::A), battle("a", "c", Winner::A)];
        for _ in 0..20 {
            let m = schedule_match(&models, &[DescriptionId::new("d")], &history, ScheduleMode::Balanced, &mut rng).unwrap();
            let pair: BTreeSet<&str> = [m.model_a.as_str(), m.model_b.as_str()].into();
            assert_eq!(pair, BTreeSet::from(["b", "c"]));
        }
    }

    #[test]
    fn csv_exports() {
        let ratings = [ModelRating {
            model: "a".into(),
            median: 1001.5,
            ci_low: 990.0,
            ci_high: 1010.0,
        }];
        assert_eq!(ratings_csv(&ratings).unwrap(), "model,median,ci_low,ci_high\na,1001.5,990.0,1010.0\n");
        let m = win_rate_matrix(&[battle("a", "b", Winner::A)]);
        assert_eq!(matrix_csv(&m).unwrap(), "model,a,b\na,,1\nb,0,\n");
    }
}
