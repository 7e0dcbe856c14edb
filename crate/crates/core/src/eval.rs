//! Detection metrics, few-shot prompt assembly and rating aggregation.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{reasoning, Domain, Label, NewsSample};
use crate::error::{Error, Result};
use crate::model::{Ablation, Model};
use crate::rng::{fnv1a, from_seed, indexed_seed, substream_seed, Rng};

/// Confusion counts; the positive class is fake unless stated otherwise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn add(&mut self, pred: Label, label: Label) {
        self.add_with_positive(pred, label, Label::Fake);
    }

    pub fn add_with_positive(&mut self, pred: Label, label: Label, positive: Label) {
        match (pred == positive, label == positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total()).0
    }

    pub fn prf(&self) -> Prf {
        let (precision, p_undef) = ratio(self.tp, self.tp + self.fp);
        let (recall, r_undef) = ratio(self.tp, self.tp + self.fn_);
        let (f1, f_undef) = f1_score(precision, recall);
        Prf {
            precision,
            recall,
            f1,
            undefined: p_undef || r_undef || f_undef,
        }
    }
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Harmonic mean of precision and recall; `(0, true)` when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> (f64, bool) {
    let s = precision + recall;
    if s == 0.0 {
        (0.0, true)
    } else {
        (2.0 * precision * recall / s, false)
    }
}

/// Precision, recall and F1. `undefined` flags a zero denominator, in
/// which case the affected value is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub overall: Prf,
    pub counts: ConfusionCounts,
    /// In `Domain::ALL` order.
    pub per_domain: Vec<(Domain, ConfusionCounts, Prf)>,
}

pub fn compute_metrics(preds: &[Label], labels: &[Label], domains: &[Domain]) -> Result<MetricsReport> {
    compute_metrics_with_positive(preds, labels, domains, Label::Fake)
}

pub fn compute_metrics_with_positive(
    preds: &[Label],
    labels: &[Label],
    domains: &[Domain],
    positive: Label,
) -> Result<MetricsReport> {
    if preds.len() != labels.len() || preds.len() != domains.len() {
        return Err(Error::Eval(format!(
            "length mismatch: {} predictions, {} labels, {} domains",
            preds.len(),
            labels.len(),
            domains.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut all = ConfusionCounts::default();
    let mut by_domain = [ConfusionCounts::default(); 4];
    for ((p, l), d) in preds.iter().zip(labels).zip(domains) {
        all.add_with_positive(*p, *l, positive);
        by_domain[d.index()].add_with_positive(*p, *l, positive);
    }
    Ok(MetricsReport {
        accuracy: all.accuracy(),
        overall: all.prf(),
        counts: all,
        per_domain: Domain::ALL
            .iter()
            .map(|d| (*d, by_domain[d.index()], by_domain[d.index()].prf()))
            .collect(),
    })
}

impl MetricsReport {
    /// `Acc` then `Pre/Rec/F1` for each domain.
    pub fn domain_header() -> Vec<String> {
        let mut h = alloc::vec!["Method".to_string(), "Acc".to_string()];
        for d in Domain::ALL {
            for m in ["Pre", "Rec", "F1"] {
                h.push(format!("{d}.{m}"));
            }
        }
        h
    }

    pub fn domain_row(&self, method: &str) -> Vec<String> {
        let mut r = alloc::vec![method.to_string(), fmt3(self.accuracy)];
        for (_, _, prf) in &self.per_domain {
            r.extend([fmt3(prf.precision), fmt3(prf.recall), fmt3(prf.f1)]);
        }
        r
    }

    pub fn fewshot_header() -> Vec<String> {
        ["Setup", "Accuracy", "Precision", "Recall", "F1-score"]
            .map(String::from)
            .to_vec()
    }

    pub fn fewshot_row(&self, setup: &str) -> Vec<String> {
        alloc::vec![
            setup.to_string(),
            fmt3(self.accuracy),
            fmt3(self.overall.precision),
            fmt3(self.overall.recall),
            fmt3(self.overall.f1),
        ]
    }

    pub fn ablation_header() -> Vec<String> {
        ["Method", "Accuracy", "Precision", "Recall", "F1-score"]
            .map(String::from)
            .to_vec()
    }

    /// Domains whose precision, recall or F1 hit a zero denominator.
    pub fn undefined_domains(&self) -> Vec<Domain> {
        self.per_domain
            .iter()
            .filter(|(_, _, p)| p.undefined)
            .map(|(d, _, _)| *d)
            .collect()
    }
}

pub fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

/// Query prompt of the reasoner; `{headline}` and `{answer}` are filled in.
pub const PROMPT_TEMPLATE: &str = "<Img>E_img</Img> Assume you are an expert in manipulation reasoning. This is a photo selected from a piece of news, which needs to be real and consistent with the headline of the news: {headline}. The news may be confronted with media manipulations. You are required to reason about manipulations of the news. The reasoning needs to be consistent to the news content, and to be clear and detailed. Reasoning result: {answer}";

/// Image placeholder inside [`PROMPT_TEMPLATE`].
pub const IMAGE_SLOT: &str = "<Img>E_img</Img>";

pub const DEFAULT_SHOTS: [usize; 4] = [0, 1, 2, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FewShotSetup {
    pub k: usize,
    pub seed: u64,
    pub cot: bool,
}

impl FewShotSetup {
    pub fn validate(&self, allowed: &[usize]) -> Result<()> {
        if !allowed.contains(&self.k) {
            return Err(Error::Config(format!("{}-shot is not an allowed setup", self.k)));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        if self.cot {
            format!("{}-shot+CoT", self.k)
        } else {
            format!("{}-shot", self.k)
        }
    }
}

pub fn fill_template(headline: &str, answer: &str) -> String {
    PROMPT_TEMPLATE
        .replace("{headline}", headline)
        .replace("{answer}", answer)
}

/// Piece of an assembled prompt: an image embedding slot or literal text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptSegment {
    Image { sample: String },
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotPrompt {
    pub text: String,
    pub plan: Vec<PromptSegment>,
}

fn exemplar_answer(s: &NewsSample, cot: bool) -> Result<String> {
    let sec = reasoning::split(&s.reasoning)
        .ok_or_else(|| Error::Eval(format!("exemplar {} has a malformed annotation", s.id)))?;
    Ok(if cot {
        format!(
            "{} {} {} {} {} {}",
            reasoning::SUMMARY,
            sec.summary,
            reasoning::CLUE,
            sec.clue,
            reasoning::AUTH,
            sec.auth
        )
    } else {
        format!("{} {}", reasoning::AUTH, sec.auth)
    })
}

pub fn assemble_fewshot_prompt(
    setup: &FewShotSetup,
    exemplars: &[&NewsSample],
    query: &NewsSample,
) -> Result<FewShotPrompt> {
    if exemplars.len() != setup.k {
        return Err(Error::Eval(format!(
            "{}-shot setup given {} exemplars",
            setup.k,
            exemplars.len()
        )));
    }
    let mut ids = BTreeSet::new();
    for e in exemplars {
        if e.id == query.id || !ids.insert(e.id.as_str()) {
            return Err(Error::Eval(format!("exemplar {} overlaps the query or another exemplar", e.id)));
        }
    }
    let mut blocks: Vec<(String, String)> = Vec::with_capacity(setup.k + 1);
    for e in exemplars {
        blocks.push((e.id.clone(), fill_template(&e.text, &exemplar_answer(e, setup.cot)?)));
    }
    blocks.push((query.id.clone(), fill_template(&query.text, "")));
    let mut plan = Vec::new();
    let mut text = String::new();
    for (i, (id, block)) in blocks.iter().enumerate() {
        if i > 0 {
            text.push_str("\n\n");
            push_text(&mut plan, "\n\n");
        }
        text.push_str(block);
        let rest = block.strip_prefix(IMAGE_SLOT).expect("template starts with the image slot");
        plan.push(PromptSegment::Image { sample: id.clone() });
        push_text(&mut plan, rest);
    }
    Ok(FewShotPrompt { text, plan })
}

fn push_text(plan: &mut Vec<PromptSegment>, s: &str) {
    if let Some(PromptSegment::Text(t)) = plan.last_mut() {
        t.push_str(s);
    } else {
        plan.push(PromptSegment::Text(s.to_string()));
    }
}

/// Indices of `k` exemplars from `pool`, never the query. When `k >= 2`
/// at least one fake exemplar is included if the pool has one.
pub fn select_exemplars(pool: &[NewsSample], query_id: &str, k: usize, seed: u64) -> Result<Vec<usize>> {
    let candidates: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].id != query_id).collect();
    if candidates.len() < k {
        return Err(Error::Eval(format!(
            "{k}-shot needs {k} exemplars, pool has {}",
            candidates.len()
        )));
    }
    let stream = substream_seed(seed, "exemplars");
    let mut rng = from_seed(indexed_seed(stream, fnv1a(query_id.as_bytes())));
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    if k >= 2 {
        let fakes: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&i| pool[i].label == Label::Fake)
            .collect();
        if !fakes.is_empty() {
            chosen.push(fakes[rng.gen_range(0..fakes.len())]);
        }
    }
    let mut rest: Vec<usize> = candidates.into_iter().filter(|i| !chosen.contains(i)).collect();
    rest.shuffle(&mut rng);
    let need = k - chosen.len();
    chosen.extend_from_slice(&rest[..need]);
    chosen.shuffle(&mut rng);
    Ok(chosen)
}

/// Outcome of one few-shot setup.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotResult {
    pub setup: FewShotSetup,
    pub report: MetricsReport,
    pub prompts: Vec<FewShotPrompt>,
}

/// Detection under a few-shot setup. The prediction is the head's
/// `p >= 0.5`; the assembled prompts are returned alongside.
pub fn run_fewshot_eval(
    model: &Model,
    setup: &FewShotSetup,
    pool: &[NewsSample],
    test: &[NewsSample],
    ablation: Ablation,
) -> Result<FewShotResult> {
    if model.prompt_learner.head.out.weight.iter().all(|w| *w == 0.0) || !model.all_finite() {
        return Err(Error::Eval("model is untrained".into()));
    }
    let mut preds = Vec::with_capacity(test.len());
    let mut prompts = Vec::with_capacity(test.len());
    for q in test {
        let idx = select_exemplars(pool, &q.id, setup.k, setup.seed)?;
        let ex: Vec<&NewsSample> = idx.iter().map(|&i| &pool[i]).collect();
        prompts.push(assemble_fewshot_prompt(setup, &ex, q)?);
        preds.push(predict_label(model, q, ablation)?);
    }
    let labels: Vec<Label> = test.iter().map(|s| s.label).collect();
    let domains: Vec<Domain> = test.iter().map(|s| s.domain).collect();
    Ok(FewShotResult {
        setup: *setup,
        report: compute_metrics(&preds, &labels, &domains)?,
        prompts,
    })
}

pub fn predict_label(model: &Model, s: &NewsSample, ablation: Ablation) -> Result<Label> {
    let h = model.predict(&s.image, &s.text, ablation)?;
    Ok(if h.p >= 0.5 { Label::Fake } else { Label::Real })
}

/// Plain detection metrics over a test set.
pub fn evaluate_detection(model: &Model, test: &[NewsSample], ablation: Ablation) -> Result<MetricsReport> {
    let preds = test
        .iter()
        .map(|s| predict_label(model, s, ablation))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Label> = test.iter().map(|s| s.label).collect();
    let domains: Vec<Domain> = test.iter().map(|s| s.domain).collect();
    compute_metrics(&preds, &labels, &domains)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HumanRating {
    pub rater: String,
    pub sample: String,
    pub exactness: u8,
    pub certainty: u8,
    pub detail: u8,
}

impl HumanRating {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("exactness", self.exactness),
            ("certainty", self.certainty),
            ("detail", self.detail),
        ] {
            if !(1..=10).contains(&v) {
                return Err(Error::Eval(format!("{name} score {v} outside 1..10")));
            }
        }
        Ok(())
    }
}

/// Aspect means and their mean, at full precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingSummary {
    pub n: usize,
    pub exactness: f64,
    pub certainty: f64,
    pub detail: f64,
    pub total: f64,
}

impl RatingSummary {
    pub fn from_means(exactness: f64, certainty: f64, detail: f64, n: usize) -> Self {
        Self {
            n,
            exactness,
            certainty,
            detail,
            total: (exactness + certainty + detail) / 3.0,
        }
    }

    pub fn rating_row(&self, method: &str) -> Vec<String> {
        alloc::vec![
            method.to_string(),
            format!("{:.2}", self.exactness),
            format!("{:.2}", self.certainty),
            format!("{:.2}", self.detail),
            format!("{:.2}", self.total),
        ]
    }

    pub fn rating_header() -> Vec<String> {
        ["Method", "Exactness", "Certainty", "Detail", "Total"]
            .map(String::from)
            .to_vec()
    }
}

pub fn aggregate_ratings(ratings: &[HumanRating]) -> Result<RatingSummary> {
    if ratings.is_empty() {
        return Err(Error::Empty("ratings"));
    }
    let mut sums = [0.0; 3];
    for r in ratings {
        r.validate()?;
        sums[0] += r.exactness as f64;
        sums[1] += r.certainty as f64;
        sums[2] += r.detail as f64;
    }
    let n = ratings.len() as f64;
    Ok(RatingSummary::from_means(sums[0] / n, sums[1] / n, sums[2] / n, ratings.len()))
}
