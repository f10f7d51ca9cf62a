use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DecodeError, LogitProvider, VcdConfig};

/// Non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax; `-inf` entries receive zero mass.
pub fn softmax(logits: &[f64]) -> Result<ProbVector, DecodeError> {
    if logits.is_empty() {
        return Err(DecodeError::Shape("softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(DecodeError::NonFinite("logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(DecodeError::NonFinite("logits (all masked)"));
    }
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(ProbVector(exps.into_iter().map(|e| e / z).collect()))
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<(), DecodeError> {
    if a.len() != b.len() {
        return Err(DecodeError::Length {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// `(1 + alpha) * orig - alpha * dist`, written so that equal inputs or a
/// zero weight return `orig` bit for bit.
fn contrast(l_orig: &[f64], l_dist: &[f64], alpha: f64) -> Vec<f64> {
    l_orig
        .iter()
        .zip(l_dist)
        .map(|(&o, &d)| o + alpha * (o - d))
        .collect()
}

pub fn contrastive_distribution(l_orig: &[f64], l_dist: &[f64], alpha: f64) -> Result<ProbVector, DecodeError> {
    check_lengths(l_orig, l_dist)?;
    if alpha.is_nan() || alpha < 0.0 {
        return Err(DecodeError::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    softmax(&contrast(l_orig, l_dist, alpha))
}

/// Tokens whose probability reaches `beta` times the largest probability.
pub fn plausible_set(p_orig: &ProbVector, beta: f64) -> Vec<usize> {
    let max = p_orig.0.iter().copied().fold(0.0, f64::max);
    let cut = beta * max;
    (0..p_orig.len()).filter(|&t| p_orig.0[t] >= cut).collect()
}

/// Contrastive distribution restricted to the plausible set and
/// renormalized inside it.
pub fn vcd_step(
    l_orig: &[f64],
    l_dist: &[f64],
    p_orig: &ProbVector,
    config: &VcdConfig,
) -> Result<ProbVector, DecodeError> {
    config.validate()?;
    check_lengths(l_orig, l_dist)?;
    if p_orig.len() != l_orig.len() {
        return Err(DecodeError::Length {
            expected: l_orig.len(),
            got: p_orig.len(),
        });
    }
    let mut logits = contrast(l_orig, l_dist, config.alpha);
    let keep = plausible_set(p_orig, config.beta);
    let mut mask = vec![true; logits.len()];
    for t in keep {
        mask[t] = false;
    }
    for (l, masked) in logits.iter_mut().zip(mask) {
        if masked {
            *l = f64::NEG_INFINITY;
        }
    }
    softmax(&logits)
}

/// `x + sigma * eps` with standard-normal `eps` drawn from a generator seeded
/// by `seed`, in row-major order.
pub fn distort(x: &Array2<f64>, sigma: f64, seed: u64) -> Array2<f64> {
    if sigma == 0.0 {
        return x.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = x.clone();
    for v in out.iter_mut() {
        let eps: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * eps;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub token: usize,
    pub p_orig: Vec<f64>,
    pub p_final: Vec<f64>,
    pub plausible: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRun {
    pub tokens: Vec<usize>,
    pub steps: Vec<StepTrace>,
    /// Set when the provider failed; `tokens` holds what was decoded before.
    pub error: Option<DecodeError>,
}

fn call(
    provider: &dyn LogitProvider,
    context: &[usize],
    x: &Array2<f64>,
) -> Result<Vec<f64>, DecodeError> {
    let l = provider.logits(context, x)?;
    if l.len() != provider.vocab() {
        return Err(DecodeError::Length {
            expected: provider.vocab(),
            got: l.len(),
        });
    }
    if l.iter().any(|v| !v.is_finite()) {
        return Err(DecodeError::NonFinite("provider logits"));
    }
    Ok(l)
}

fn decode_loop(
    max_len: usize,
    end_token: Option<usize>,
    mut step: impl FnMut(&[usize]) -> Result<StepTrace, DecodeError>,
) -> DecodeRun {
    let mut run = DecodeRun {
        tokens: Vec::new(),
        steps: Vec::new(),
        error: None,
    };
    while run.tokens.len() < max_len {
        match step(&run.tokens) {
            Ok(trace) => {
                let t = trace.token;
                run.tokens.push(t);
                run.steps.push(trace);
                if Some(t) == end_token {
                    break;
                }
            }
            Err(e) => {
                run.error = Some(match e {
                    DecodeError::Provider { .. } => e,
                    other => DecodeError::Provider {
                        step: run.tokens.len(),
                        message: other.to_string(),
                    },
                });
                break;
            }
        }
    }
    run
}

/// Greedy decoding from the plausibility-constrained contrastive
/// distribution between `x` and its distorted copy.
pub fn greedy_decode(
    provider: &dyn LogitProvider,
    x: &Array2<f64>,
    x_distorted: &Array2<f64>,
    config: &VcdConfig,
    max_len: usize,
    end_token: Option<usize>,
) -> DecodeRun {
    if let Err(e) = config.validate() {
        return DecodeRun {
            tokens: vec![],
            steps: vec![],
            error: Some(e),
        };
    }
    decode_loop(max_len, end_token, |ctx| {
        let l_orig = call(provider, ctx, x)?;
        let l_dist = call(provider, ctx, x_distorted)?;
        let p_orig = softmax(&l_orig)?;
        let p = vcd_step(&l_orig, &l_dist, &p_orig, config)?;
        Ok(StepTrace {
            token: p.argmax(),
            plausible: plausible_set(&p_orig, config.beta),
            p_orig: p_orig.into_vec(),
            p_final: p.into_vec(),
        })
    })
}

/// Greedy decoding on the original conditioning only.
pub fn plain_greedy(
    provider: &dyn LogitProvider,
    x: &Array2<f64>,
    max_len: usize,
    end_token: Option<usize>,
) -> DecodeRun {
    decode_loop(max_len, end_token, |ctx| {
        let l = call(provider, ctx, x)?;
        let p = softmax(&l)?;
        Ok(StepTrace {
            token: argmax(&l),
            plausible: (0..l.len()).collect(),
            p_orig: p.as_slice().to_vec(),
            p_final: p.into_vec(),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_softmax() {
        let p = contrastive_distribution(&[1.0, 0.0, -1.0], &[0.0, 0.0, 0.0], 1.0).unwrap();
        for (got, want) in p.as_slice().iter().zip([0.86681, 0.11731, 0.01588]) {
            assert!((got - want).abs() < 5e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn plausible_hand_case() {
        let p = ProbVector(vec![0.5, 0.3, 0.2]);
        assert_eq!(plausible_set(&p, 0.5), vec![0, 1]);
        assert_eq!(plausible_set(&p, 0.0), vec![0, 1, 2]);
        assert_eq!(plausible_set(&ProbVector(vec![0.4, 0.4, 0.2]), 1.0), vec![0, 1]);
    }

    #[test]
    fn masked_step() {
        let lo = [1.0, 0.0, -1.0];
        let ld = [0.0, 0.0, 0.0];
        let p_orig = softmax(&lo).unwrap();
        let cfg = VcdConfig { alpha: 1.0, beta: 0.5, ..Default::default() };
        // p_orig ≈ (0.665, 0.245, 0.090): only token 0 clears 0.5 * 0.665
        let p = vcd_step(&lo, &ld, &p_orig, &cfg).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn distort_zero_sigma_and_determinism() {
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64);
        assert_eq!(distort(&x, 0.0, 9), x);
        assert_eq!(distort(&x, 0.5, 9), distort(&x, 0.5, 9));
        assert_ne!(distort(&x, 0.5, 9), distort(&x, 0.5, 10));
    }
}
