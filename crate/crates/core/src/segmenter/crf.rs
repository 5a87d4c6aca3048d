//! Linear-chain CRF over BMES with START/STOP states, all in log space.

use serde::{Deserialize, Serialize};

use crate::corpus::{Tag, TagSeq, NUM_TAGS};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

pub const START: usize = NUM_TAGS;
pub const STOP: usize = NUM_TAGS + 1;
/// Rows and columns of the transition matrix: B, M, E, S, START, STOP.
pub const NUM_STATES: usize = NUM_TAGS + 2;

/// Whether illegal BMES transitions are forced to `-inf`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrfMode {
    #[default]
    Constrained,
    Unconstrained,
}

pub fn transition_allowed(from: usize, to: usize) -> bool {
    match (from, to) {
        (_, START) | (STOP, _) => false,
        (START, STOP) => false,
        (START, t) => Tag::ALL[t].can_start(),
        (f, STOP) => Tag::ALL[f].can_end(),
        (f, t) => Tag::ALL[f].allows_next(Tag::ALL[t]),
    }
}

/// Transition scores with the mode applied; `raw` is row-major `NUM_STATES x NUM_STATES`.
pub fn effective_transitions(raw: &[f64], mode: CrfMode) -> Vec<f64> {
    assert_eq!(raw.len(), NUM_STATES * NUM_STATES, "contract violation: transition size");
    let mut a = raw.to_vec();
    for from in 0..NUM_STATES {
        for to in 0..NUM_STATES {
            let structural = to == START || from == STOP || (from == START && to == STOP);
            let illegal = mode == CrfMode::Constrained && !transition_allowed(from, to);
            if structural || illegal {
                a[from * NUM_STATES + to] = f64::NEG_INFINITY;
            }
        }
    }
    a
}

pub(crate) fn logsumexp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Forward-backward tables for one sentence.
///
/// `emissions` is `len x NUM_TAGS` row-major, `trans` an effective transition matrix.
#[derive(Clone, Debug)]
pub struct Lattice<'a> {
    emissions: &'a [f64],
    trans: &'a [f64],
    len: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    log_z: f64,
    log_z_backward: f64,
}

impl<'a> Lattice<'a> {
    pub fn new(emissions: &'a [f64], trans: &'a [f64]) -> Self {
        let n = NUM_TAGS;
        assert!(
            !emissions.is_empty() && emissions.len().is_multiple_of(n),
            "contract violation: emissions must be len x {n}"
        );
        let len = emissions.len() / n;
        let a = |f: usize, t: usize| trans[f * NUM_STATES + t];

        let mut alpha = vec![0.0; len * n];
        for k in 0..n {
            alpha[k] = a(START, k) + emissions[k];
        }
        for t in 1..len {
            for k in 0..n {
                let prev = (0..n).map(|j| alpha[(t - 1) * n + j] + a(j, k));
                alpha[t * n + k] = logsumexp(prev) + emissions[t * n + k];
            }
        }
        let log_z = logsumexp((0..n).map(|k| alpha[(len - 1) * n + k] + a(k, STOP)));

        let mut beta = vec![0.0; len * n];
        for k in 0..n {
            beta[(len - 1) * n + k] = a(k, STOP);
        }
        for t in (0..len - 1).rev() {
            for k in 0..n {
                let next = (0..n).map(|j| a(k, j) + emissions[(t + 1) * n + j] + beta[(t + 1) * n + j]);
                beta[t * n + k] = logsumexp(next);
            }
        }
        let log_z_backward = logsumexp((0..n).map(|k| a(START, k) + emissions[k] + beta[k]));

        Lattice {
            emissions,
            trans,
            len,
            alpha,
            beta,
            log_z,
            log_z_backward,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    /// The partition function computed from the backward table.
    pub fn log_z_backward(&self) -> f64 {
        self.log_z_backward
    }

    fn a(&self, f: usize, t: usize) -> f64 {
        self.trans[f * NUM_STATES + t]
    }

    /// Unnormalized log score of a tag path, including START and STOP.
    pub fn path_score(&self, path: &[usize]) -> f64 {
        assert_eq!(path.len(), self.len, "contract violation: path length");
        let n = NUM_TAGS;
        let mut s = self.a(START, path[0]) + self.a(path[self.len - 1], STOP);
        for (t, &k) in path.iter().enumerate() {
            s += self.emissions[t * n + k];
            if t > 0 {
                s += self.a(path[t - 1], k);
            }
        }
        s
    }

    /// `len x NUM_TAGS` posteriors `P(y_t = k | x)`.
    pub fn marginals(&self) -> Vec<f64> {
        self.alpha
            .iter()
            .zip(&self.beta)
            .map(|(a, b)| (a + b - self.log_z).exp())
            .collect()
    }

    /// Expected transition counts, `NUM_STATES x NUM_STATES`.
    pub fn expected_transitions(&self) -> Vec<f64> {
        let n = NUM_TAGS;
        let mut out = vec![0.0; NUM_STATES * NUM_STATES];
        for k in 0..n {
            out[START * NUM_STATES + k] = (self.a(START, k) + self.emissions[k] + self.beta[k] - self.log_z).exp();
            let last = (self.len - 1) * n + k;
            out[k * NUM_STATES + STOP] = (self.alpha[last] + self.a(k, STOP) - self.log_z).exp();
        }
        for t in 0..self.len - 1 {
            for i in 0..n {
                for j in 0..n {
                    let lp = self.alpha[t * n + i]
                        + self.a(i, j)
                        + self.emissions[(t + 1) * n + j]
                        + self.beta[(t + 1) * n + j]
                        - self.log_z;
                    out[i * NUM_STATES + j] += lp.exp();
                }
            }
        }
        out
    }

    /// Best path and its log probability. Ties go to the lowest tag index.
    pub fn viterbi(&self) -> (Vec<usize>, f64) {
        let n = NUM_TAGS;
        let mut delta = vec![0.0; self.len * n];
        let mut back = vec![0usize; self.len * n];
        for (k, d) in delta.iter_mut().take(n).enumerate() {
            *d = self.a(START, k) + self.emissions[k];
        }
        for t in 1..self.len {
            for k in 0..n {
                let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
                for j in 0..n {
                    let s = delta[(t - 1) * n + j] + self.a(j, k);
                    if s > best {
                        best = s;
                        arg = j;
                    }
                }
                delta[t * n + k] = best + self.emissions[t * n + k];
                back[t * n + k] = arg;
            }
        }
        let (mut best, mut last) = (f64::NEG_INFINITY, 0);
        for k in 0..n {
            let s = delta[(self.len - 1) * n + k] + self.a(k, STOP);
            if s > best {
                best = s;
                last = k;
            }
        }
        let mut path = vec![last; self.len];
        for t in (1..self.len).rev() {
            path[t - 1] = back[t * n + path[t]];
        }
        (path, (best - self.log_z).min(0.0))
    }
}

/// Per-sentence CRF results used by the selection strategies.
#[derive(Clone, Debug, PartialEq)]
pub struct SegOutput {
    /// `len x NUM_TAGS`, row-major.
    pub marginals: Vec<f64>,
    pub viterbi_tags: TagSeq,
    pub viterbi_logprob: f64,
}

impl SegOutput {
    pub fn len(&self) -> usize {
        self.viterbi_tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.viterbi_tags.is_empty()
    }

    pub fn marginal_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.marginals.chunks(NUM_TAGS)
    }
}

fn path_to_tags(path: &[usize]) -> Result<TagSeq> {
    TagSeq::new(path.iter().map(|&k| Tag::ALL[k]).collect())
}

pub fn decode(emissions: &[f64], raw_trans: &[f64], mode: CrfMode) -> Result<SegOutput> {
    let trans = effective_transitions(raw_trans, mode);
    let lat = Lattice::new(emissions, &trans);
    let (path, logprob) = lat.viterbi();
    Ok(SegOutput {
        marginals: lat.marginals(),
        viterbi_tags: path_to_tags(&path)?,
        viterbi_logprob: logprob,
    })
}

pub fn viterbi_decode(emissions: &[f64], raw_trans: &[f64], mode: CrfMode) -> Result<(TagSeq, f64)> {
    let trans = effective_transitions(raw_trans, mode);
    let (path, lp) = Lattice::new(emissions, &trans).viterbi();
    Ok((path_to_tags(&path)?, lp))
}

pub fn token_marginals(emissions: &[f64], raw_trans: &[f64], mode: CrfMode) -> Vec<f64> {
    let trans = effective_transitions(raw_trans, mode);
    Lattice::new(emissions, &trans).marginals()
}

/// `NUM_TAGS`-sized gold tag indices.
fn gold_path(gold: &[Tag], len: usize) -> Result<Vec<usize>> {
    if gold.len() != len {
        return Err(Error::Contract(format!(
            "gold has {} tags for {len} emission rows",
            gold.len()
        )));
    }
    Ok(gold.iter().map(|t| t.index()).collect())
}

/// Negative log-likelihood with gradients for emissions and raw transitions.
pub fn nll_with_grads(
    emissions: &[f64],
    raw_trans: &[f64],
    gold: &[Tag],
    mode: CrfMode,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let trans = effective_transitions(raw_trans, mode);
    let lat = Lattice::new(emissions, &trans);
    let path = gold_path(gold, lat.len())?;
    let score = lat.path_score(&path);
    if score == f64::NEG_INFINITY {
        return Err(Error::Contract(format!(
            "gold path {} has zero probability under the transition mask",
            gold.iter().map(|t| t.as_char()).collect::<String>()
        )));
    }
    let nll = (lat.log_z() - score).max(0.0);

    let mut d_em = lat.marginals();
    for (t, &k) in path.iter().enumerate() {
        d_em[t * NUM_TAGS + k] -= 1.0;
    }
    let mut d_tr = lat.expected_transitions();
    d_tr[START * NUM_STATES + path[0]] -= 1.0;
    d_tr[path[path.len() - 1] * NUM_STATES + STOP] -= 1.0;
    for w in path.windows(2) {
        d_tr[w[0] * NUM_STATES + w[1]] -= 1.0;
    }
    for (g, a) in d_tr.iter_mut().zip(&trans) {
        if *a == f64::NEG_INFINITY {
            *g = 0.0;
        }
    }
    Ok((nll, d_em, d_tr))
}

pub fn crf_nll(emissions: &[f64], raw_trans: &[f64], gold: &TagSeq, mode: CrfMode) -> Result<f64> {
    nll_with_grads(emissions, raw_trans, gold.tags(), mode).map(|r| r.0)
}

/// Records the NLL of `gold` on the tape as one fused node.
pub fn crf_nll_var(tape: &mut Tape, emissions: Var, transitions: Var, gold: &TagSeq, mode: CrfMode) -> Result<Var> {
    let em = tape.value(emissions);
    if em.cols() != NUM_TAGS {
        return Err(Error::Contract(format!("emissions have {} columns", em.cols())));
    }
    let (nll, d_em, d_tr) = nll_with_grads(em.data(), tape.value(transitions).data(), gold.tags(), mode)?;
    Ok(tape.fused_scalar(nll, vec![(emissions, d_em), (transitions, d_tr)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Every tag path of length `len`, legal or not.
    fn all_paths(len: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..len {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..NUM_TAGS).map(move |k| {
                        let mut q = p.clone();
                        q.push(k);
                        q
                    })
                })
                .collect();
        }
        out
    }

    struct Enumerated {
        log_z: f64,
        best: Vec<usize>,
        best_lp: f64,
        marginals: Vec<f64>,
        log_probs: Vec<(Vec<usize>, f64)>,
    }

    fn enumerate(em: &[f64], raw: &[f64], mode: CrfMode) -> Enumerated {
        let trans = effective_transitions(raw, mode);
        let lat = Lattice::new(em, &trans);
        let len = em.len() / NUM_TAGS;
        let scored: Vec<(Vec<usize>, f64)> = all_paths(len)
            .into_iter()
            .map(|p| {
                let s = lat.path_score(&p);
                (p, s)
            })
            .collect();
        let log_z = logsumexp(scored.iter().map(|x| x.1));
        let mut best = (vec![], f64::NEG_INFINITY);
        for (p, s) in &scored {
            if *s > best.1 {
                best = (p.clone(), *s);
            }
        }
        let mut marginals = vec![0.0; len * NUM_TAGS];
        for (p, s) in &scored {
            let pr = (s - log_z).exp();
            for (t, &k) in p.iter().enumerate() {
                marginals[t * NUM_TAGS + k] += pr;
            }
        }
        Enumerated {
            log_z,
            best: best.0,
            best_lp: best.1 - log_z,
            marginals,
            log_probs: scored.into_iter().map(|(p, s)| (p, s - log_z)).collect(),
        }
    }

    fn random_instance(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> (Vec<f64>, Vec<f64>) {
        let em = (0..len * NUM_TAGS).map(|_| rng.gen_range(-scale..scale)).collect();
        let tr = (0..NUM_STATES * NUM_STATES).map(|_| rng.gen_range(-scale..scale)).collect();
        (em, tr)
    }

    fn tags(path: &[usize]) -> Vec<Tag> {
        path.iter().map(|&k| Tag::ALL[k]).collect()
    }

    #[test]
    fn matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..120 {
            for len in 1..=4 {
                let (em, tr) = random_instance(&mut rng, len, 2.0);
                for mode in [CrfMode::Constrained, CrfMode::Unconstrained] {
                    let e = enumerate(&em, &tr, mode);
                    let trans = effective_transitions(&tr, mode);
                    let lat = Lattice::new(&em, &trans);
                    assert!((lat.log_z() - e.log_z).abs() < 1e-8, "trial {trial}");
                    assert!((lat.log_z_backward() - lat.log_z()).abs() < 1e-8);
                    for (m, x) in lat.marginals().iter().zip(&e.marginals) {
                        assert!((m - x).abs() < 1e-8);
                    }
                    let (path, lp) = lat.viterbi();
                    assert_eq!(path, e.best);
                    assert!((lp - e.best_lp).abs() < 1e-8);
                    for (p, lp) in &e.log_probs {
                        if *lp == f64::NEG_INFINITY {
                            continue;
                        }
                        let nll = nll_with_grads(&em, &tr, &tags(p), mode).unwrap().0;
                        assert!((nll + lp).abs() < 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn uniform_single_token() {
        let em = vec![0.0; NUM_TAGS];
        let tr = vec![0.0; NUM_STATES * NUM_STATES];
        let nll = nll_with_grads(&em, &tr, &[Tag::S], CrfMode::Unconstrained).unwrap().0;
        assert!((nll - 4f64.ln()).abs() < 1e-12);
        let m = token_marginals(&em, &tr, CrfMode::Unconstrained);
        assert!(m.iter().all(|&x| (x - 0.25).abs() < 1e-12));
        // under the grammar only S can stand alone
        let m = token_marginals(&em, &tr, CrfMode::Constrained);
        assert_eq!(m, vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(nll_with_grads(&em, &tr, &[Tag::S], CrfMode::Constrained).unwrap().0, 0.0);
    }

    #[test]
    fn dominant_s_decodes_all_s() {
        let mut em = vec![0.0; 5 * NUM_TAGS];
        for t in 0..5 {
            em[t * NUM_TAGS + Tag::S.index()] = 10.0;
        }
        let tr = vec![0.0; NUM_STATES * NUM_STATES];
        let (t, lp) = viterbi_decode(&em, &tr, CrfMode::Constrained).unwrap();
        assert_eq!(t.to_string(), "SSSSS");
        assert!(lp <= 0.0);
    }

    #[test]
    fn illegal_gold_is_rejected() {
        let em = vec![0.0; 2 * NUM_TAGS];
        let tr = vec![0.0; NUM_STATES * NUM_STATES];
        let r = nll_with_grads(&em, &tr, &[Tag::B, Tag::S], CrfMode::Constrained);
        assert!(matches!(r, Err(Error::Contract(_))));
        assert!(nll_with_grads(&em, &tr, &[Tag::S], CrfMode::Constrained).is_err());
    }

    #[test]
    fn constrained_paths_follow_grammar() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let len = rng.gen_range(1..12);
            let (em, tr) = random_instance(&mut rng, len, 5.0);
            let out = decode(&em, &tr, CrfMode::Constrained).unwrap();
            assert!(out.viterbi_logprob <= 0.0);
            for row in out.marginal_rows() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gold = [Tag::B, Tag::E, Tag::S];
        for mode in [CrfMode::Constrained, CrfMode::Unconstrained] {
            let (em, tr) = random_instance(&mut rng, 3, 1.0);
            let (_, d_em, d_tr) = nll_with_grads(&em, &tr, &gold, mode).unwrap();
            let h = 1e-5;
            let f = |em: &[f64], tr: &[f64]| nll_with_grads(em, tr, &gold, mode).unwrap().0;
            for i in 0..em.len() {
                let (mut p, mut m) = (em.clone(), em.clone());
                p[i] += h;
                m[i] -= h;
                let num = (f(&p, &tr) - f(&m, &tr)) / (2.0 * h);
                assert!(crate::tensor::rel_error(d_em[i], num) < 1e-4);
            }
            for i in 0..tr.len() {
                let (mut p, mut m) = (tr.clone(), tr.clone());
                p[i] += h;
                m[i] -= h;
                let num = (f(&em, &p) - f(&em, &m)) / (2.0 * h);
                assert!(crate::tensor::rel_error(d_tr[i], num) < 1e-4, "{i}");
            }
        }
    }

    #[test]
    fn long_sentences_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (em, tr) = random_instance(&mut rng, 200, 30.0);
        let out = decode(&em, &tr, CrfMode::Constrained).unwrap();
        assert!(out.marginals.iter().all(|x| x.is_finite()));
        assert!(out.viterbi_logprob.is_finite());
    }
}
