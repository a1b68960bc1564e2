//! Classifier and domain-discriminator families: small fully connected
//! networks over flat parameter vectors, plus the prediction utilities
//! (softmax, sharpening, confidence) the rest of the toolkit builds on.

mod losses;
mod mlp;
mod train;

pub use losses::{CrossEntropyLoss, DiscriminatorBce, SquaredErrorLoss};
pub use train::{
    discriminator_loss, mean_cross_entropy, train_discriminator, train_supervised,
    OptimizerConfig,
};
pub(crate) use train::sgd_cross_entropy;

pub(crate) use mlp::sigmoid;

use mlp::{softmax, Arch};

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, ParamVector};
use crate::seed;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Hidden-layer nonlinearity. The default family uses `Relu`; `Tanh` is
/// shipped for work that prefers a smooth loss surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::contract(format!("unknown activation '{other}'"))),
        }
    }
}

/// Topology of the classifier f(·;θ): logits over `num_classes` classes.
/// Empty `hidden_dims` gives multinomial logistic regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

impl ClassifierSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        num_classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            num_classes,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The default family: one hidden layer of width 32, relu.
    pub fn default_for(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(input_dim, vec![32], num_classes, Activation::Relu)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::contract("input_dim must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::contract("num_classes must be at least 2"));
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::contract("hidden layer widths must be at least 1"));
        }
        Ok(())
    }

    pub(crate) fn arch(&self) -> Arch {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        Arch {
            dims,
            activation: self.activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.arch().param_count()
    }

    /// Fresh parameters drawn from the seed (weights uniform ±1/√fan_in,
    /// biases zero).
    pub fn init(&self, seed_value: u64) -> Result<ClassifierParams> {
        self.validate()?;
        let arch = self.arch();
        let mut rng = seed::rng(seed_value);
        let values = ParamVector::new(arch.init_values(&mut rng), arch.segments())?;
        Ok(ClassifierParams {
            spec: self.clone(),
            values,
        })
    }

    /// All-zero parameters (uniform predictions).
    pub fn zeros(&self) -> Result<ClassifierParams> {
        self.validate()?;
        let arch = self.arch();
        Ok(ClassifierParams {
            spec: self.clone(),
            values: ParamVector::zeros(arch.segments()),
        })
    }
}

/// Topology of the discriminator g(·;φ): a single logit whose sigmoid is
/// the probability of "source".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl DiscriminatorSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The default family: one hidden layer of width 32, relu, scalar head.
    pub fn default_for(input_dim: usize) -> Result<Self> {
        Self::new(input_dim, vec![32], Activation::Relu)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::contract("input_dim must be positive"));
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::contract("hidden layer widths must be at least 1"));
        }
        Ok(())
    }

    pub(crate) fn arch(&self) -> Arch {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(1);
        Arch {
            dims,
            activation: self.activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.arch().param_count()
    }

    pub fn init(&self, seed_value: u64) -> Result<DiscriminatorParams> {
        self.validate()?;
        let arch = self.arch();
        let mut rng = seed::rng(seed_value);
        let values = ParamVector::new(arch.init_values(&mut rng), arch.segments())?;
        Ok(DiscriminatorParams {
            spec: self.clone(),
            values,
        })
    }

    pub fn zeros(&self) -> Result<DiscriminatorParams> {
        self.validate()?;
        let arch = self.arch();
        Ok(DiscriminatorParams {
            spec: self.clone(),
            values: ParamVector::zeros(arch.segments()),
        })
    }
}

/// Trained classifier parameters bound to their topology.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    spec: ClassifierSpec,
    values: ParamVector,
}

impl ClassifierParams {
    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.values
    }

    pub(crate) fn from_values(spec: ClassifierSpec, raw: Vec<f64>) -> Result<Self> {
        let values = ParamVector::new(raw, spec.arch().segments())?;
        Ok(Self { spec, values })
    }

    /// L2 norm of the parameters (reporting aid for the norm-bound
    /// assumption; nothing is projected).
    pub fn l2_norm(&self) -> f64 {
        self.values.l2_norm()
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.write(&mut f)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let meta = vec![
            ("kind".into(), "classifier".into()),
            ("input_dim".into(), self.spec.input_dim.to_string()),
            ("hidden_dims".into(), join_dims(&self.spec.hidden_dims)),
            ("num_classes".into(), self.spec.num_classes.to_string()),
            ("activation".into(), self.spec.activation.name().into()),
        ];
        self.values.write_to(w, &meta)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        Self::read(&mut f)
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let (values, meta) = ParamVector::read_from(r)?;
        expect_meta(&meta, "kind", "classifier")?;
        let spec = ClassifierSpec::new(
            meta_usize(&meta, "input_dim")?,
            parse_dims(&meta_str(&meta, "hidden_dims")?)?,
            meta_usize(&meta, "num_classes")?,
            Activation::parse(&meta_str(&meta, "activation")?)?,
        )?;
        if values.len() != spec.param_count() {
            return Err(Error::contract(format!(
                "parameter file holds {} values but the topology needs {}",
                values.len(),
                spec.param_count()
            )));
        }
        Ok(Self { spec, values })
    }
}

/// Trained discriminator parameters bound to their topology.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    spec: DiscriminatorSpec,
    values: ParamVector,
}

impl DiscriminatorParams {
    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.values
    }

    pub(crate) fn from_values(spec: DiscriminatorSpec, raw: Vec<f64>) -> Result<Self> {
        let values = ParamVector::new(raw, spec.arch().segments())?;
        Ok(Self { spec, values })
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let meta = vec![
            ("kind".into(), "discriminator".into()),
            ("input_dim".into(), self.spec.input_dim.to_string()),
            ("hidden_dims".into(), join_dims(&self.spec.hidden_dims)),
            ("activation".into(), self.spec.activation.name().into()),
        ];
        let mut f = std::fs::File::create(path)?;
        self.values.write_to(&mut f, &meta)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let (values, meta) = ParamVector::read_from(&mut f)?;
        expect_meta(&meta, "kind", "discriminator")?;
        let spec = DiscriminatorSpec::new(
            meta_usize(&meta, "input_dim")?,
            parse_dims(&meta_str(&meta, "hidden_dims")?)?,
            Activation::parse(&meta_str(&meta, "activation")?)?,
        )?;
        if values.len() != spec.param_count() {
            return Err(Error::contract(format!(
                "parameter file holds {} values but the topology needs {}",
                values.len(),
                spec.param_count()
            )));
        }
        Ok(Self { spec, values })
    }
}

fn join_dims(dims: &[usize]) -> String {
    dims.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split('x')
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| Error::contract(format!("bad hidden_dims entry '{p}'")))
        })
        .collect()
}

fn meta_str(meta: &[(String, String)], key: &str) -> Result<String> {
    meta.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Error::contract(format!("parameter file is missing meta key '{key}'")))
}

fn meta_usize(meta: &[(String, String)], key: &str) -> Result<usize> {
    meta_str(meta, key)?
        .parse()
        .map_err(|_| Error::contract(format!("meta key '{key}' is not a count")))
}

fn expect_meta(meta: &[(String, String)], key: &str, want: &str) -> Result<()> {
    let got = meta_str(meta, key)?;
    if got != want {
        return Err(Error::contract(format!(
            "parameter file is a '{got}', expected a '{want}'"
        )));
    }
    Ok(())
}

/// Per-example logits and their softmax probabilities.
#[derive(Debug, Clone)]
pub struct Prediction {
    logits: DenseMatrix,
    probs: DenseMatrix,
}

impl Prediction {
    /// Wraps raw logit rows, computing their softmax.
    pub fn from_logits(logits: DenseMatrix) -> Prediction {
        let mut probs = DenseMatrix::zeros(logits.rows(), logits.cols());
        for i in 0..logits.rows() {
            probs.row_mut(i).copy_from_slice(&softmax(logits.row(i)));
        }
        Prediction { logits, probs }
    }

    pub fn logits(&self) -> &DenseMatrix {
        &self.logits
    }

    pub fn probs(&self) -> &DenseMatrix {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.logits.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.rows() == 0
    }
}

/// Logits and softmax probabilities for every row of `x`.
pub fn predict(params: &ClassifierParams, x: &DenseMatrix) -> Result<Prediction> {
    let arch = params.spec.arch();
    if x.cols() != arch.input_dim() {
        return Err(Error::contract(format!(
            "input has {} features, classifier expects {}",
            x.cols(),
            arch.input_dim()
        )));
    }
    let k = arch.output_dim();
    let mut logits = DenseMatrix::zeros(x.rows(), k);
    let mut probs = DenseMatrix::zeros(x.rows(), k);
    let mut acts: Vec<Vec<f64>> = Vec::new();
    for i in 0..x.rows() {
        arch.forward(params.values.values(), x.row(i), &mut acts);
        let z = acts.last().unwrap();
        logits.row_mut(i).copy_from_slice(z);
        probs.row_mut(i).copy_from_slice(&softmax(z));
    }
    Ok(Prediction { logits, probs })
}

/// The activations feeding the output layer (the input itself for a
/// linear model); the representation the manifold scorer embeds.
pub fn penultimate_activations(params: &ClassifierParams, x: &DenseMatrix) -> Result<DenseMatrix> {
    let arch = params.spec.arch();
    if x.cols() != arch.input_dim() {
        return Err(Error::contract(format!(
            "input has {} features, classifier expects {}",
            x.cols(),
            arch.input_dim()
        )));
    }
    let layers = arch.num_layers();
    let dim = arch.dims[layers - 1];
    let mut out = DenseMatrix::zeros(x.rows(), dim);
    let mut acts: Vec<Vec<f64>> = Vec::new();
    for i in 0..x.rows() {
        arch.forward(params.values.values(), x.row(i), &mut acts);
        out.row_mut(i).copy_from_slice(&acts[layers - 1]);
    }
    Ok(out)
}

/// Argmax class per example, ties toward the smallest class index.
pub fn sharpen_labels(pred: &Prediction) -> Vec<usize> {
    (0..pred.logits.rows())
        .map(|i| mlp::argmax_primal(pred.logits.row(i)))
        .collect()
}

/// One-hot rows of the argmax class (ties toward the smallest index).
pub fn sharpen(pred: &Prediction) -> DenseMatrix {
    let k = pred.logits.cols();
    let mut out = DenseMatrix::zeros(pred.logits.rows(), k);
    for (i, c) in sharpen_labels(pred).into_iter().enumerate() {
        out.set(i, c, 1.0);
    }
    out
}

/// Per-example max softmax probability, in [1/num_classes, 1].
pub fn confidence(pred: &Prediction) -> Vec<f64> {
    (0..pred.probs.rows())
        .map(|i| {
            pred.probs
                .row(i)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Raw discriminator logits g(x;φ) for every row of `x`.
pub fn discriminator_logits(params: &DiscriminatorParams, x: &DenseMatrix) -> Result<Vec<f64>> {
    let arch = params.spec.arch();
    if x.cols() != arch.input_dim() {
        return Err(Error::contract(format!(
            "input has {} features, discriminator expects {}",
            x.cols(),
            arch.input_dim()
        )));
    }
    let mut out = Vec::with_capacity(x.rows());
    let mut acts: Vec<Vec<f64>> = Vec::new();
    for i in 0..x.rows() {
        arch.forward(params.values.values(), x.row(i), &mut acts);
        out.push(acts.last().unwrap()[0]);
    }
    Ok(out)
}

/// σ(g(x;φ)) per example: the predicted probability of "source".
pub fn discriminator_scores(params: &DiscriminatorParams, x: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(discriminator_logits(params, x)?
        .into_iter()
        .map(sigmoid)
        .collect())
}
