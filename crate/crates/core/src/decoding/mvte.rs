use ndarray::{concatenate, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DecodeError, Pathway, TokenTensor};

/// `x · weight + bias`, applied per token.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    /// in × out
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Affine {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self, DecodeError> {
        if weight.ncols() != bias.len() {
            return Err(DecodeError::Shape(format!(
                "weight has {} outputs but bias has {}",
                weight.ncols(),
                bias.len()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn random(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize) -> Self {
        let scale = 1.0 / (inputs as f64).sqrt();
        let mut draw = || -> f64 {
            let z: f64 = StandardNormal.sample(&mut *rng);
            scale * z
        };
        let weight = Array2::from_shape_simple_fn((inputs, outputs), &mut draw);
        let bias = Array1::from_shape_simple_fn(outputs, &mut draw);
        Self { weight, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>, DecodeError> {
        if x.ncols() != self.inputs() {
            return Err(DecodeError::Shape(format!(
                "affine map expects {} channels, got {}",
                self.inputs(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.weight) + &self.bias)
    }
}

/// Linear–ReLU–Linear scoring each token for each of `m` global slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub first: Affine,
    pub second: Affine,
}

impl Mlp {
    pub fn new(first: Affine, second: Affine) -> Result<Self, DecodeError> {
        if first.outputs() != second.inputs() {
            return Err(DecodeError::Shape(format!(
                "hidden width mismatch: {} vs {}",
                first.outputs(),
                second.inputs()
            )));
        }
        if second.outputs() == 0 {
            return Err(DecodeError::Shape("at least one global token is required".into()));
        }
        Ok(Self { first, second })
    }

    /// Number of generated global tokens.
    pub fn m(&self) -> usize {
        self.second.outputs()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>, DecodeError> {
        let h = self.first.apply(x)?.mapv(|v| v.max(0.0));
        self.second.apply(&h)
    }
}

/// Attention map (tokens × m): the MLP scores softmaxed down each column.
pub fn mvte_attention(x: &TokenTensor, mlp: &Mlp) -> Result<Array2<f64>, DecodeError> {
    let mut scores = mlp.forward(&x.data)?;
    for mut col in scores.axis_iter_mut(Axis(1)) {
        let max = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        col.mapv_inplace(|v| (v - max).exp());
        let z = col.sum();
        col.mapv_inplace(|v| v / z);
    }
    Ok(scores)
}

/// Append `m` global tokens, each an attention-weighted mixture of the
/// input tokens: returns `[X ; Aᵀ X]` with `L + m` rows.
pub fn mvte_generate(x: &TokenTensor, mlp: &Mlp) -> Result<TokenTensor, DecodeError> {
    let a = mvte_attention(x, mlp)?;
    let g = a.t().dot(&x.data);
    let out = concatenate(Axis(0), &[x.data.view(), g.view()])
        .map_err(|e| DecodeError::Shape(e.to_string()))?;
    TokenTensor::new(out, x.pathway)
}

/// Channel-concatenate the two pathways and project.
pub fn mvte_fuse(xo: &TokenTensor, xd: &TokenTensor, proj: &Affine) -> Result<TokenTensor, DecodeError> {
    if xo.tokens() != xd.tokens() {
        return Err(DecodeError::Shape(format!(
            "pathways have {} and {} tokens",
            xo.tokens(),
            xd.tokens()
        )));
    }
    let cat = concatenate(Axis(1), &[xo.data.view(), xd.data.view()])
        .map_err(|e| DecodeError::Shape(e.to_string()))?;
    TokenTensor::new(proj.apply(&cat)?, Pathway::Fused)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvteParams {
    pub mlp_o: Mlp,
    pub mlp_d: Mlp,
    pub proj: Affine,
}

impl MvteParams {
    /// Seeded random parameters with `1/sqrt(fan_in)` scaling.
    pub fn random(seed: u64, d_o: usize, d_d: usize, hidden: usize, m: usize, d_out: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp_o = Mlp {
            first: Affine::random(&mut rng, d_o, hidden),
            second: Affine::random(&mut rng, hidden, m),
        };
        let mlp_d = Mlp {
            first: Affine::random(&mut rng, d_d, hidden),
            second: Affine::random(&mut rng, hidden, m),
        };
        let proj = Affine::random(&mut rng, d_o + d_d, d_out);
        Self { mlp_o, mlp_d, proj }
    }

    pub fn forward(&self, xo: &TokenTensor, xd: &TokenTensor) -> Result<TokenTensor, DecodeError> {
        let xo = mvte_generate(xo, &self.mlp_o)?;
        let xd = mvte_generate(xd, &self.mlp_d)?;
        mvte_fuse(&xo, &xd, &self.proj)
    }
}

/// Stand-in encoder outputs: two standard-normal token tensors sharing a
/// token count.
pub fn synthetic_pathways(seed: u64, tokens: usize, d_o: usize, d_d: usize) -> (TokenTensor, TokenTensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let xo = Array2::from_shape_simple_fn((tokens, d_o), &mut draw);
    let xd = Array2::from_shape_simple_fn((tokens, d_d), &mut draw);
    (
        TokenTensor { data: xo, pathway: Pathway::Original },
        TokenTensor { data: xd, pathway: Pathway::Distorted },
    )
}
