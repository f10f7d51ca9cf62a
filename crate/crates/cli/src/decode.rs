use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use surgkit_core::decoding::{
    distort, greedy_decode, plain_greedy, synthetic_pathways, BigramProvider, DecodeRun, LogitProvider,
    MvteParams, ScriptedProvider, StepTrace, VcdConfig,
};

use crate::config::Config;
use crate::error::CliError;
use crate::files::{open, read_to_string, require};

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Contrast weight (default 1).
    #[arg(long)]
    alpha: Option<f64>,
    /// Plausibility cut as a fraction of the top probability (default 0.1).
    #[arg(long)]
    beta: Option<f64>,
    /// Conditioning noise standard deviation (default 0.3).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Vocabulary size of the built-in random provider; checked against file providers.
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// `scripted:<file>` or `bigram:<file>`; a seeded random bigram table when absent.
    #[arg(long, value_name = "KIND:FILE")]
    provider: Option<String>,
    /// Stop token (default: the last vocabulary entry).
    #[arg(long, conflicts_with = "no_end_token")]
    end_token: Option<usize>,
    /// Decode to --max-len regardless of the tokens produced.
    #[arg(long)]
    no_end_token: bool,
    /// Tokens per synthetic encoder pathway.
    #[arg(long, default_value_t = 32)]
    tokens: usize,
    /// Channels per synthetic encoder pathway.
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Global tokens generated per pathway before fusion.
    #[arg(long, default_value_t = 4)]
    global_tokens: usize,
}

#[derive(Debug, Serialize)]
struct RunOut {
    tokens: Vec<usize>,
    steps: Vec<StepTrace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl From<DecodeRun> for RunOut {
    fn from(r: DecodeRun) -> Self {
        Self {
            tokens: r.tokens,
            steps: r.steps,
            error: r.error.map(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Serialize)]
struct Output {
    alpha: f64,
    beta: f64,
    sigma: f64,
    seed: u64,
    vocab: usize,
    max_len: usize,
    end_token: Option<usize>,
    /// Shape of the fused conditioning tensor (tokens, channels).
    conditioning: (usize, usize),
    contrastive: RunOut,
    plain: RunOut,
    differs: bool,
}

/// Fused two-pathway conditioning with `channels` output channels.
fn conditioning(a: &DecodeArgs, seed: u64, channels: usize) -> Result<Array2<f64>, CliError> {
    if a.tokens == 0 || a.dim == 0 || a.global_tokens == 0 || channels == 0 {
        return Err(CliError::Invalid("--tokens, --dim and --global-tokens must be positive".into()));
    }
    let (xo, xd) = synthetic_pathways(seed, a.tokens, a.dim, a.dim);
    let params = MvteParams::random(seed, a.dim, a.dim, 2 * a.dim, a.global_tokens, channels);
    Ok(params.forward(&xo, &xd).map_err(CliError::invalid)?.data)
}

fn random_bigram(vocab: usize, channels: usize, seed: u64) -> Result<BigramProvider, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6269_6772_616d);
    let table = Array2::from_shape_simple_fn((vocab + 1, vocab), || rng.random_range(-2.0..2.0));
    let visual = Array2::from_shape_simple_fn((vocab, channels), || rng.random_range(-1.0..1.0));
    BigramProvider::new(table, Some(visual)).map_err(CliError::invalid)
}

pub fn decode_sim(a: DecodeArgs, config: &Config) -> Result<(), CliError> {
    let d = &config.decode;
    let defaults = VcdConfig::default();
    let cfg = VcdConfig {
        alpha: a.alpha.or(d.alpha).unwrap_or(defaults.alpha),
        beta: a.beta.or(d.beta).unwrap_or(defaults.beta),
        sigma: a.sigma.or(d.sigma).unwrap_or(defaults.sigma),
        seed: a.seed.or(d.seed).unwrap_or(defaults.seed),
    };
    cfg.validate().map_err(CliError::invalid)?;
    let max_len = a.max_len.or(d.max_len).unwrap_or(16);
    if max_len == 0 {
        return Err(CliError::Invalid("--max-len must be at least 1".into()));
    }

    let (provider, x): (Box<dyn LogitProvider>, Array2<f64>) = match a.provider.as_deref() {
        None => {
            let vocab = a.vocab.unwrap_or(8);
            if vocab < 2 {
                return Err(CliError::Invalid("--vocab must be at least 2".into()));
            }
            let x = conditioning(&a, cfg.seed, a.dim)?;
            (Box::new(random_bigram(vocab, a.dim, cfg.seed)?), x)
        }
        Some(choice) => {
            let (kind, file) = choice
                .split_once(':')
                .ok_or_else(|| CliError::Invalid(format!("--provider expects KIND:FILE, got `{choice}`")))?;
            if !matches!(kind, "scripted" | "bigram") {
                return Err(CliError::Invalid(format!(
                    "unknown provider kind `{kind}`, expected scripted or bigram"
                )));
            }
            let file = PathBuf::from(file);
            require(&file)?;
            match kind {
                "scripted" => {
                    let x = conditioning(&a, cfg.seed, a.dim)?;
                    let p = ScriptedProvider::parse(open(&file)?, x.clone())
                        .map_err(|e| CliError::Invalid(format!("{}: {e}", file.display())))?;
                    (Box::new(p), x)
                }
                "bigram" => {
                    let p = BigramProvider::from_json(&read_to_string(&file)?)
                        .map_err(|e| CliError::Invalid(format!("{}: {e}", file.display())))?;
                    let x = conditioning(&a, cfg.seed, p.visual_dim().unwrap_or(a.dim))?;
                    (Box::new(p), x)
                }
                _ => unreachable!(),
            }
        }
    };
    let vocab = provider.vocab();
    if let Some(v) = a.vocab {
        if a.provider.is_some() && v != vocab {
            return Err(CliError::Invalid(format!("--vocab {v} does not match the provider's {vocab}")));
        }
    }
    let end_token = match (a.no_end_token, a.end_token) {
        (true, _) => None,
        (false, Some(t)) if t >= vocab => {
            return Err(CliError::Invalid(format!("--end-token {t} is outside the {vocab}-token vocabulary")))
        }
        (false, Some(t)) => Some(t),
        (false, None) => Some(vocab - 1),
    };

    let distorted = distort(&x, cfg.sigma, cfg.seed);
    let contrastive = greedy_decode(provider.as_ref(), &x, &distorted, &cfg, max_len, end_token);
    let plain = plain_greedy(provider.as_ref(), &x, max_len, end_token);
    let failed = contrastive.error.clone().or(plain.error.clone());
    let out = Output {
        alpha: cfg.alpha,
        beta: cfg.beta,
        sigma: cfg.sigma,
        seed: cfg.seed,
        vocab,
        max_len,
        end_token,
        conditioning: x.dim(),
        differs: contrastive.tokens != plain.tokens,
        contrastive: contrastive.into(),
        plain: plain.into(),
    };
    log::info!(
        "contrastive {:?} / plain {:?}",
        out.contrastive.tokens,
        out.plain.tokens
    );
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &out)
        .map_err(std::io::Error::other)
        .and_then(|_| writeln!(stdout))
        .map_err(|e| CliError::Io(e.to_string()))?;
    match failed {
        Some(e) => Err(CliError::Invalid(e.to_string())),
        None => Ok(()),
    }
}
