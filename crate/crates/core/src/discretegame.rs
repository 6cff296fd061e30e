//! Twenty questions as a toy generative process.
//!
//! An interrogator asks a fixed sequence of yes/no questions about a hidden
//! element of a finite set. The oracle may hold a fixed element, or it may be
//! *lazy*: it never picks an element and answers 0 with probability N⁰/N,
//! where N is the number of elements consistent with the answers so far and
//! N⁰ the number of those answering 0. Both oracles induce the same
//! distribution over answer strings.
//!
//! Entropies here are in bits. The expected entropy reduction of a question
//! that splits N consistent elements into N⁰ + N¹ = N is
//!
//! ```text
//! ΔH = log₂N − (N⁰/N) log₂N⁰ − (N¹/N) log₂N¹
//! ```
//!
//! which is 1 bit for an even split and 0 when one side is empty.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float;
use crate::mc::{self, stream_rng};

/// Enumeration is exact up to this many elements.
pub const EXACT_ENUMERATION_LIMIT: usize = 1 << 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameUniverse {
    elements: Vec<String>,
    /// `questions[q][e]`: answer of element e to question q.
    questions: Vec<Vec<bool>>,
}

impl GameUniverse {
    /// Validates sizes, distinct element names, and that the full answer
    /// string identifies each element.
    pub fn new(elements: Vec<String>, questions: Vec<Vec<bool>>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::invalid("elements", "need at least one element"));
        }
        let mut names: Vec<&String> = elements.iter().collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("elements", "names must be distinct"));
        }
        for (q, table) in questions.iter().enumerate() {
            if table.len() != elements.len() {
                return Err(Error::invalid(
                    "questions",
                    format!("question {q} has {} answers for {} elements", table.len(), elements.len()),
                ));
            }
        }
        let u = GameUniverse { elements, questions };
        let mut seen = BTreeMap::new();
        for e in 0..u.len() {
            if let Some(other) = seen.insert(u.answer_string(e), e) {
                return Err(Error::invalid(
                    "questions",
                    format!(
                        "elements {:?} and {:?} give the same answers",
                        u.elements[other], u.elements[e]
                    ),
                ));
            }
        }
        Ok(u)
    }

    /// 2^bits elements; question j asks for bit j of the index, most
    /// significant first. Every question halves the consistent set.
    pub fn balanced(bits: u32) -> Result<Self> {
        if bits > 20 {
            return Err(Error::invalid("bits", "at most 20"));
        }
        let n = 1usize << bits;
        let elements = (0..n).map(|i| format!("e{i}")).collect();
        let questions = (0..bits)
            .map(|j| (0..n).map(|i| (i >> (bits - 1 - j)) & 1 == 1).collect())
            .collect();
        GameUniverse::new(elements, questions)
    }

    pub fn from_fn(elements: Vec<String>, n_questions: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let n = elements.len();
        let questions = (0..n_questions).map(|q| (0..n).map(|e| f(e, q)).collect()).collect();
        GameUniverse::new(elements, questions)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn n_questions(&self) -> usize {
        self.questions.len()
    }

    pub fn elements(&self) -> &[String] {
        &self.elements
    }

    pub fn answer(&self, element: usize, question: usize) -> bool {
        self.questions[question][element]
    }

    fn answer_string(&self, element: usize) -> String {
        (0..self.n_questions())
            .map(|q| if self.answer(element, q) { '1' } else { '0' })
            .collect()
    }

    /// Elements consistent with an answer prefix.
    pub fn consistent(&self, answers: &[bool]) -> Vec<usize> {
        (0..self.len())
            .filter(|&e| answers.iter().enumerate().all(|(q, a)| self.answer(e, q) == *a))
            .collect()
    }

    fn split(&self, set: &[usize], question: usize) -> (Vec<usize>, Vec<usize>) {
        set.iter().partition(|&&e| !self.answer(e, question))
    }
}

/// Expected entropy reduction in bits of a split N⁰ + N¹.
pub fn split_entropy_bits(n_zero: usize, n_one: usize) -> f64 {
    let n = (n_zero + n_one) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let plogp = |k: usize| if k == 0 { 0.0 } else { k as f64 / n * (k as f64).log2() };
    n.log2() - plogp(n_zero) - plogp(n_one)
}

/// The forward "masking" map: keeps the first j answers and hides the rest.
pub fn mask(answers: &[bool], j: usize) -> Vec<Option<bool>> {
    answers
        .iter()
        .enumerate()
        .map(|(i, a)| (i < j).then_some(*a))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Policy {
    /// Answers truthfully about a fixed element (by index).
    FixedElement { element: usize },
    /// Answers 0 with probability N⁰/N.
    LazyRandom,
    /// Answers 0 with probability N⁰/N + bias (clamped), but never
    /// contradicts itself.
    Biased { bias: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GameState {
    pub step: usize,
    pub answers: Vec<bool>,
    pub consistent_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GameStep {
    pub step: usize,
    /// N before the question.
    pub n_before: usize,
    pub n_zero: usize,
    pub n_one: usize,
    pub answer: bool,
    /// N after the answer.
    pub n_after: usize,
    /// Expected reduction of the split, bits.
    pub delta_h_bits: f64,
    /// log₂(n_before / n_after), bits.
    pub realized_bits: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GameRecord {
    pub states: Vec<GameState>,
    pub steps: Vec<GameStep>,
}

impl GameRecord {
    pub fn answers(&self) -> &[bool] {
        &self.states.last().expect("initial state").answers
    }

    /// log₂ N_j after each step, starting with log₂ N₀.
    pub fn entropy_bits(&self) -> Vec<f64> {
        self.states.iter().map(|s| (s.consistent_count as f64).log2()).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "N_j", "answer", "delta_H_bits", "realized_bits"])?;
        for s in &self.steps {
            w.write_record([
                s.step.to_string(),
                s.n_after.to_string(),
                u8::from(s.answer).to_string(),
                float(s.delta_h_bits),
                float(s.realized_bits),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn prob_zero(policy: Policy, universe: &GameUniverse, n_zero: usize, n_one: usize, question: usize) -> f64 {
    if n_zero == 0 {
        return 0.0;
    }
    if n_one == 0 {
        return 1.0;
    }
    let p = n_zero as f64 / (n_zero + n_one) as f64;
    match policy {
        Policy::FixedElement { element } => {
            if universe.answer(element, question) {
                0.0
            } else {
                1.0
            }
        }
        Policy::LazyRandom => p,
        Policy::Biased { bias } => (p + bias).clamp(0.0, 1.0),
    }
}

fn check_policy(universe: &GameUniverse, policy: Policy) -> Result<()> {
    match policy {
        Policy::FixedElement { element } if element >= universe.len() => Err(Error::invalid(
            "element",
            format!("index {element} outside a universe of {}", universe.len()),
        )),
        Policy::Biased { bias } if !bias.is_finite() => Err(Error::invalid("bias", "must be finite")),
        _ => Ok(()),
    }
}

fn play_with_rng<R: Rng + ?Sized>(universe: &GameUniverse, policy: Policy, rng: &mut R) -> Result<GameRecord> {
    let mut set: Vec<usize> = (0..universe.len()).collect();
    let mut answers = Vec::with_capacity(universe.n_questions());
    let mut states = vec![GameState {
        step: 0,
        answers: Vec::new(),
        consistent_count: set.len(),
    }];
    let mut steps = Vec::with_capacity(universe.n_questions());
    for q in 0..universe.n_questions() {
        let (zero, one) = universe.split(&set, q);
        let p0 = prob_zero(policy, universe, zero.len(), one.len(), q);
        let u: f64 = rng.random();
        let answer = u >= p0;
        let n_before = set.len();
        let (n_zero, n_one) = (zero.len(), one.len());
        set = if answer { one } else { zero };
        if set.is_empty() {
            return Err(Error::Inconsistent { step: q + 1 });
        }
        answers.push(answer);
        steps.push(GameStep {
            step: q + 1,
            n_before,
            n_zero,
            n_one,
            answer,
            n_after: set.len(),
            delta_h_bits: split_entropy_bits(n_zero, n_one),
            realized_bits: (n_before as f64 / set.len() as f64).log2(),
        });
        states.push(GameState {
            step: q + 1,
            answers: answers.clone(),
            consistent_count: set.len(),
        });
    }
    Ok(GameRecord { states, steps })
}

/// Plays one full game (every question asked once).
pub fn play_oracle(universe: &GameUniverse, policy: Policy, seed: u64) -> Result<GameRecord> {
    check_policy(universe, policy)?;
    let mut rng = stream_rng(seed, mc::streams::GAME);
    play_with_rng(universe, policy, &mut rng)
}

fn key(answers: &[bool]) -> String {
    answers.iter().map(|a| if *a { '1' } else { '0' }).collect()
}

/// Exact distribution over full answer strings. For `FixedElement` the
/// hidden element is drawn uniformly, as the interrogator would see it.
pub fn exact_string_distribution(universe: &GameUniverse, policy: Policy) -> Result<BTreeMap<String, f64>> {
    check_policy(universe, policy)?;
    if universe.len() > EXACT_ENUMERATION_LIMIT {
        return Err(Error::Unsupported(format!(
            "exact enumeration is limited to {EXACT_ENUMERATION_LIMIT} elements"
        )));
    }
    let mut out = BTreeMap::new();
    if let Policy::FixedElement { .. } = policy {
        let p = 1.0 / universe.len() as f64;
        for e in 0..universe.len() {
            *out.entry(universe.answer_string(e)).or_insert(0.0) += p;
        }
        return Ok(out);
    }
    fn walk(
        u: &GameUniverse,
        policy: Policy,
        set: Vec<usize>,
        prefix: &mut Vec<bool>,
        p: f64,
        out: &mut BTreeMap<String, f64>,
    ) {
        let q = prefix.len();
        if q == u.n_questions() {
            *out.entry(key(prefix)).or_insert(0.0) += p;
            return;
        }
        let (zero, one) = u.split(&set, q);
        let p0 = prob_zero(policy, u, zero.len(), one.len(), q);
        for (answer, branch, pb) in [(false, zero, p0), (true, one, 1.0 - p0)] {
            if pb > 0.0 && !branch.is_empty() {
                prefix.push(answer);
                walk(u, policy, branch, prefix, p * pb, out);
                prefix.pop();
            }
        }
    }
    walk(universe, policy, (0..universe.len()).collect(), &mut Vec::new(), 1.0, &mut out);
    Ok(out)
}

fn total_variation(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let keys: std::collections::BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    0.5 * keys
        .into_iter()
        .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

/// Empirical answer-string frequencies of `n_games` games. Fixed-element
/// games draw the hidden element uniformly per game.
pub fn empirical_string_distribution(
    universe: &GameUniverse,
    policy: Policy,
    n_games: usize,
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    check_policy(universe, policy)?;
    let fixed = matches!(policy, Policy::FixedElement { .. });
    let strings = (0..n_games)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(mc::derive_seed(seed, &[mc::streams::GAME, i as u64]), 0);
            let policy = if fixed {
                Policy::FixedElement {
                    element: rng.random_range(0..universe.len()),
                }
            } else {
                policy
            };
            Ok(key(play_with_rng(universe, policy, &mut rng)?.answers()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    for s in strings {
        *counts.entry(s).or_insert(0.0) += 1.0;
    }
    let n = n_games.max(1) as f64;
    counts.values_mut().for_each(|c| *c /= n);
    Ok(counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PolicyComparison {
    pub n_games: usize,
    /// TV distance between the two empirical string distributions.
    pub tv_empirical: f64,
    /// TV distance between the exact distributions, when enumerable.
    pub tv_exact: Option<f64>,
}

/// Compares the fixed-element oracle (uniform hidden element) against the
/// lazy random oracle.
pub fn verify_policy_equivalence(universe: &GameUniverse, n_games: usize, seed: u64) -> Result<PolicyComparison> {
    compare_with_fixed(universe, Policy::LazyRandom, n_games, seed)
}

/// Compares the fixed-element oracle against `other`.
pub fn compare_with_fixed(universe: &GameUniverse, other: Policy, n_games: usize, seed: u64) -> Result<PolicyComparison> {
    if n_games == 0 {
        return Err(Error::invalid("n_games", "must be >= 1"));
    }
    let fixed = Policy::FixedElement { element: 0 };
    let a = empirical_string_distribution(universe, fixed, n_games, mc::derive_seed(seed, &[1]))?;
    let b = empirical_string_distribution(universe, other, n_games, mc::derive_seed(seed, &[2]))?;
    let tv_exact = if universe.len() <= EXACT_ENUMERATION_LIMIT {
        Some(total_variation(
            &exact_string_distribution(universe, fixed)?,
            &exact_string_distribution(universe, other)?,
        ))
    } else {
        None
    };
    Ok(PolicyComparison {
        n_games,
        tv_empirical: total_variation(&a, &b),
        tv_exact,
    })
}
