//! Speculative verification: the accept/reject rule, the residual
//! distribution sampled after a rejection, and the exact single-step output
//! law used as an oracle.

use rand::Rng;

use crate::domain::{check_same_len, Categorical, Token};
use crate::error::{Error, Result};

/// Normalizers below this are treated as `p == q`.
const RESIDUAL_EPS: f64 = 1e-15;

/// Draft tokens together with the drafter's distribution at each position.
#[derive(Debug, Clone)]
pub struct DraftBatch {
    tokens: Vec<Token>,
    probs: Vec<Categorical>,
}

impl DraftBatch {
    pub fn new(tokens: Vec<Token>, probs: Vec<Categorical>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Input("draft batch must contain at least one token".into()));
        }
        if tokens.len() != probs.len() {
            return Err(Error::Input(format!(
                "{} draft tokens but {} draft distributions",
                tokens.len(),
                probs.len()
            )));
        }
        for (i, (&x, q)) in tokens.iter().zip(&probs).enumerate() {
            if q.prob(x) <= 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "draft token {x} at position {i} has zero draft probability"
                )));
            }
        }
        Ok(Self { tokens, probs })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn probs(&self) -> &[Categorical] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Result of verifying one draft batch.
#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    /// Number of draft tokens accepted, in `0..=t`.
    pub accepted_count: usize,
    /// Accepted prefix followed by one corrected or bonus token.
    pub output_tokens: Vec<Token>,
    /// Verifier distributions `p_1..p_{n+1}` for the output positions.
    pub output_probs: Vec<Categorical>,
    /// Whether a draft token was rejected.
    pub rejected: bool,
}

/// Normalized positive part of `p − q`.
pub fn residual_distribution(p: &Categorical, q: &Categorical) -> Result<Categorical> {
    check_same_len(p, q)?;
    let weights: Vec<f64> = p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    if total < RESIDUAL_EPS {
        return Err(Error::DegenerateResidual);
    }
    Categorical::from_weights(weights)
}

/// Verifies `batch` against the verifier's prefix distributions
/// `p_1..p_{t+1}`. Each draft token is accepted with probability
/// `min(1, p_i(x_i) / q_i(x_i))`. At the first rejection the corrected
/// token is drawn from the residual of `p` and `q` at that position;
/// if everything is accepted a bonus token is drawn from `p_{t+1}`.
pub fn verify<R: Rng + ?Sized>(
    batch: &DraftBatch,
    mut verifier_probs: Vec<Categorical>,
    rng: &mut R,
) -> Result<VerifyOutcome> {
    let t = batch.len();
    if verifier_probs.len() != t + 1 {
        return Err(Error::Input(format!(
            "expected {} verifier distributions for {t} drafts, got {}",
            t + 1,
            verifier_probs.len()
        )));
    }
    let dim = batch.probs[0].len();
    if let Some(bad) = verifier_probs.iter().chain(&batch.probs).find(|d| d.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, actual: bad.len() });
    }

    let mut accepted = t;
    for (i, (&x, q)) in batch.tokens.iter().zip(&batch.probs).enumerate() {
        let ratio = (verifier_probs[i].prob(x) / q.prob(x)).min(1.0);
        let u: f64 = rng.random();
        if u >= ratio {
            accepted = i;
            break;
        }
    }

    let rejected = accepted < t;
    let last = if rejected {
        residual_distribution(&verifier_probs[accepted], &batch.probs[accepted])?.sample(rng)
    } else {
        verifier_probs[t].sample(rng)
    };

    let mut output_tokens = batch.tokens[..accepted].to_vec();
    output_tokens.push(last);
    verifier_probs.truncate(accepted + 1);
    Ok(VerifyOutcome { accepted_count: accepted, output_tokens, output_probs: verifier_probs, rejected })
}

/// Exact marginal law of the single token emitted by one step of
/// speculative sampling with drafter `q` and verifier `p`, by total
/// probability over the draft token and the accept/reject branch.
/// Equals `p` whenever the rule is implemented correctly.
pub fn exact_output_distribution(p: &Categorical, q: &Categorical) -> Result<Categorical> {
    check_same_len(p, q)?;
    let (pp, qq) = (p.probs(), q.probs());
    let mut out = vec![0.0; pp.len()];
    let mut reject_mass = 0.0;
    for x in 0..pp.len() {
        if qq[x] > 0.0 {
            let accept = (pp[x] / qq[x]).min(1.0);
            out[x] += qq[x] * accept;
            reject_mass += qq[x] * (1.0 - accept);
        }
    }
    if reject_mass > 0.0 {
        let excess: Vec<f64> = pp.iter().zip(qq).map(|(a, b)| (a - b).max(0.0)).collect();
        let norm: f64 = excess.iter().sum();
        if norm > 0.0 {
            for (o, e) in out.iter_mut().zip(&excess) {
                *o += reject_mass * e / norm;
            }
        }
    }
    Categorical::from_weights(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::acceptance_rate;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cat(v: &[f64]) -> Categorical {
        Categorical::new(v.to_vec()).unwrap()
    }

    fn assert_probs(c: &Categorical, expected: &[f64], tol: f64) {
        for (a, b) in c.probs().iter().zip(expected) {
            assert!((a - b).abs() <= tol, "{:?} vs {expected:?}", c.probs());
        }
    }

    #[test]
    fn residual_examples() {
        let r = residual_distribution(&cat(&[0.7, 0.3]), &cat(&[0.3, 0.7])).unwrap();
        assert_probs(&r, &[1.0, 0.0], 1e-15);
        let r = residual_distribution(&cat(&[0.5, 0.25, 0.25]), &cat(&[0.25, 0.5, 0.25])).unwrap();
        assert_probs(&r, &[1.0, 0.0, 0.0], 1e-15);
        let p = cat(&[0.2, 0.8]);
        assert!(matches!(residual_distribution(&p, &p), Err(Error::DegenerateResidual)));
    }

    #[test]
    fn identical_drafter_accepts_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = cat(&[0.1, 0.2, 0.3, 0.4]);
        for _ in 0..500 {
            let tokens: Vec<Token> = (0..4).map(|_| p.sample(&mut rng)).collect();
            let batch = DraftBatch::new(tokens.clone(), vec![p.clone(); 4]).unwrap();
            let out = verify(&batch, vec![p.clone(); 5], &mut rng).unwrap();
            assert_eq!(out.accepted_count, 4);
            assert!(!out.rejected);
            assert_eq!(out.output_tokens.len(), 5);
            assert_eq!(out.output_probs.len(), 5);
            assert_eq!(&out.output_tokens[..4], &tokens[..]);
        }
    }

    #[test]
    fn zero_verifier_mass_always_rejects() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = cat(&[0.5, 0.5, 0.0]);
        let p1 = cat(&[0.0, 0.6, 0.4]);
        for _ in 0..1000 {
            let batch = DraftBatch::new(vec![0], vec![q.clone()]).unwrap();
            let out = verify(&batch, vec![p1.clone(), Categorical::uniform(3)], &mut rng).unwrap();
            assert_eq!(out.accepted_count, 0);
            assert!(out.rejected);
            assert_eq!(out.output_tokens.len(), 1);
            // residual of p1 against q is [0, 0.1, 0.4] normalized
            assert!(out.output_tokens[0] == 1 || out.output_tokens[0] == 2);
        }
    }

    #[test]
    fn verify_checks_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = cat(&[0.5, 0.5]);
        let batch = DraftBatch::new(vec![0, 1], vec![q.clone(), q.clone()]).unwrap();
        assert!(verify(&batch, vec![q.clone(); 2], &mut rng).is_err());
        assert!(verify(&batch, vec![q.clone(), q.clone(), cat(&[1.0])], &mut rng).is_err());
        assert!(DraftBatch::new(vec![], vec![]).is_err());
        assert!(DraftBatch::new(vec![0], vec![cat(&[0.0, 1.0])]).is_err());
        assert!(DraftBatch::new(vec![0, 1], vec![q]).is_err());
    }

    #[test]
    fn exact_output_examples() {
        let p = cat(&[0.3, 0.7]);
        assert_probs(&exact_output_distribution(&p, &p).unwrap(), p.probs(), 1e-15);
        let out = exact_output_distribution(&cat(&[1.0, 0.0]), &cat(&[0.5, 0.5])).unwrap();
        assert_probs(&out, &[1.0, 0.0], 1e-15);
        let p = cat(&[0.5, 0.3, 0.2]);
        let out = exact_output_distribution(&p, &cat(&[0.2, 0.5, 0.3])).unwrap();
        assert_probs(&out, p.probs(), 1e-12);
    }

    #[test]
    fn empirical_single_step_law_matches_verifier() {
        // t=1, vocab 3: draft randomness, accept/reject and residual sampling together
        let p = cat(&[0.5, 0.3, 0.2]);
        let q = cat(&[0.2, 0.5, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let x = q.sample(&mut rng);
            let batch = DraftBatch::new(vec![x], vec![q.clone()]).unwrap();
            let out = verify(&batch, vec![p.clone(), p.clone()], &mut rng).unwrap();
            counts[out.output_tokens[0] as usize] += 1;
        }
        for (c, want) in counts.iter().zip(p.probs()) {
            let freq = *c as f64 / n as f64;
            let se = (want * (1.0 - want) / n as f64).sqrt();
            assert!((freq - want).abs() < 4.0 * se, "{freq} vs {want}");
        }
    }

    /// Enumerates every draft sequence of length `t` and every accept/reject
    /// branch, independently of `verify`, and returns the law of the first
    /// emitted token under a context-free drafter `q` and verifier `p`.
    fn first_token_law_by_enumeration(p: &[f64], q: &[f64], t: usize) -> Vec<f64> {
        let v = p.len();
        let mut law = vec![0.0; v];
        let excess: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a - b).max(0.0)).collect();
        let norm: f64 = excess.iter().sum();
        let mut seq = vec![0usize; t];
        loop {
            let weight: f64 = seq.iter().map(|&x| q[x]).product();
            if weight > 0.0 {
                let x1 = seq[0];
                let a1 = (p[x1] / q[x1]).min(1.0);
                // accepted first draft: first output is x1 regardless of later positions
                law[x1] += weight * a1;
                if norm > 0.0 {
                    for y in 0..v {
                        law[y] += weight * (1.0 - a1) * excess[y] / norm;
                    }
                }
            }
            let mut pos = 0;
            loop {
                if pos == t {
                    return law;
                }
                seq[pos] += 1;
                if seq[pos] < v {
                    break;
                }
                seq[pos] = 0;
                pos += 1;
            }
        }
    }

    fn dist(size: usize) -> impl Strategy<Value = Categorical> {
        proptest::collection::vec(0.0f64..1.0, size).prop_filter_map("zero mass", |w| {
            let total: f64 = w.iter().sum();
            (total > 1e-6).then(|| Categorical::from_weights(w).unwrap())
        })
    }

    fn pair() -> impl Strategy<Value = (Categorical, Categorical)> {
        (1usize..=5).prop_flat_map(|v| (dist(v), dist(v)))
    }

    proptest! {
        #[test]
        fn exact_output_equals_verifier((p, q) in pair()) {
            let out = exact_output_distribution(&p, &q).unwrap();
            for (a, b) in out.probs().iter().zip(p.probs()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn enumerated_first_token_equals_verifier((p, q) in pair(), t in 1usize..=3) {
            let law = first_token_law_by_enumeration(p.probs(), q.probs(), t);
            for (a, b) in law.iter().zip(p.probs()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn acceptance_probability_is_one_minus_tv((p, q) in pair()) {
            let direct: f64 = q.probs().iter().zip(p.probs())
                .filter(|(qx, _)| **qx > 0.0)
                .map(|(qx, px)| qx * (px / qx).min(1.0))
                .sum();
            prop_assert!((direct - acceptance_rate(&p, &q).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn acceptance_rate_symmetric_and_bounded((p, q) in pair()) {
            let a = acceptance_rate(&p, &q).unwrap();
            let b = acceptance_rate(&q, &p).unwrap();
            prop_assert!((a - b).abs() <= 1e-15);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((acceptance_rate(&p, &p).unwrap() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn acceptance_rate_triangle(v in 1usize..=6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = || {
                let w: Vec<f64> = (0..v).map(|_| rng.random::<f64>() + 1e-9).collect();
                Categorical::from_weights(w).unwrap()
            };
            let (p, q, r) = (draw(), draw(), draw());
            let lhs = acceptance_rate(&p, &q).unwrap() + acceptance_rate(&q, &r).unwrap();
            prop_assert!(lhs <= acceptance_rate(&p, &r).unwrap() + 1.0 + 1e-12);
        }
    }

    #[test]
    fn expected_output_length_for_iid_acceptance() {
        // context-free p and q: drafts are iid, so per-position acceptance is
        // iid Bernoulli(acceptance_rate(p, q))
        let q = cat(&[0.5, 0.5]);
        let p = cat(&[0.3, 0.7]);
        let a = acceptance_rate(&p, &q).unwrap();
        let t = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut lens = Vec::with_capacity(n);
        for _ in 0..n {
            let tokens: Vec<Token> = (0..t).map(|_| q.sample(&mut rng)).collect();
            let batch = DraftBatch::new(tokens, vec![q.clone(); t]).unwrap();
            let out = verify(&batch, vec![p.clone(); t + 1], &mut rng).unwrap();
            lens.push(out.output_tokens.len() as f64);
        }
        let mean = lens.iter().sum::<f64>() / n as f64;
        let var = lens.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let expected = (1.0 - a.powi(t as i32 + 1)) / (1.0 - a);
        assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected} (se {se})");
    }
}
