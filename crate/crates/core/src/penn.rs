//! Pattern embedded neural networks: `f(z, ω) = f₃(f₁(z), f₂(ω))`.
//!
//! `f₁` reads the imputed covariates, `f₂` embeds the revelation vector into
//! `ℝ^m`, and `f₃` combines the concatenated outputs. The combiner's input
//! width must equal `f₁`'s output width plus the embedding dimension.

use ndarray::{concatenate, s, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{loss_and_output_grad, Architecture, LossKind, Mlp, MlpDocument, MlpGrad, SparsityBudget};
use crate::{Error, Result};

/// Prediction target of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification { classes: usize },
}

impl Task {
    pub fn output_width(&self) -> usize {
        match self {
            Task::Regression => 1,
            Task::Classification { classes } => *classes,
        }
    }

    pub fn loss(&self) -> LossKind {
        match self {
            Task::Regression => LossKind::Squared,
            Task::Classification { .. } => LossKind::CrossEntropy,
        }
    }
}

/// Architectures of the three subnetworks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PennArchitecture {
    pub covariate: Architecture,
    pub embedding: Architecture,
    pub combiner: Architecture,
}

impl PennArchitecture {
    pub fn new(covariate: Architecture, embedding: Architecture, combiner: Architecture) -> Result<Self> {
        let joined = covariate.output_width() + embedding.output_width();
        if combiner.input_width() != joined {
            return Err(Error::InvalidArchitecture(format!(
                "combiner input width {} must equal {} + {}",
                combiner.input_width(),
                covariate.output_width(),
                embedding.output_width()
            )));
        }
        Ok(Self {
            covariate,
            embedding,
            combiner,
        })
    }

    /// Simulation-study layout with hidden width `width` (70 for the simulated
    /// models, 100 for the wider real-data variant):
    /// `f₁ ∈ F(3, (d, w, w, w, w))`, `f₂ ∈ F(2, (d, 30, 30, 3))`,
    /// `f₃ ∈ F(3, (w + 3, w, w, w, out))`.
    pub fn standard(d: usize, task: Task, width: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("covariate dimension must be positive".into()));
        }
        let m = 3;
        Self::new(
            Architecture::with_depth(3, vec![d, width, width, width, width])?,
            Architecture::with_depth(2, vec![d, 30, 30, m])?,
            Architecture::with_depth(3, vec![width + m, width, width, width, task.output_width()])?,
        )
    }

    pub fn param_count(&self) -> usize {
        self.covariate.param_count() + self.embedding.param_count() + self.combiner.param_count()
    }
}

/// Baseline network that ignores the revelation vector:
/// `F(6, (d, w, w, w, w, w, w, out))`.
pub fn standard_nn_architecture(d: usize, task: Task, width: usize) -> Result<Architecture> {
    let mut widths = vec![d];
    widths.extend(std::iter::repeat_n(width, 6));
    widths.push(task.output_width());
    Architecture::with_depth(6, widths)
}

/// Kaiming-initialised PENN with the width-70 simulation layout.
pub fn build_standard_penn<R: Rng + ?Sized>(d: usize, task: Task, rng: &mut R) -> Result<Penn> {
    Ok(Penn::init(&PennArchitecture::standard(d, task, 70)?, rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Penn {
    covariate: Mlp,
    embedding: Mlp,
    combiner: Mlp,
    budget: Option<SparsityBudget>,
}

impl Penn {
    pub fn new(covariate: Mlp, embedding: Mlp, combiner: Mlp) -> Result<Self> {
        PennArchitecture::new(
            covariate.architecture().clone(),
            embedding.architecture().clone(),
            combiner.architecture().clone(),
        )?;
        Ok(Self {
            covariate,
            embedding,
            combiner,
            budget: None,
        })
    }

    pub fn init<R: Rng + ?Sized>(arch: &PennArchitecture, rng: &mut R) -> Self {
        let covariate = Mlp::init(arch.covariate.clone(), rng);
        let embedding = Mlp::init(arch.embedding.clone(), rng);
        let combiner = Mlp::init(arch.combiner.clone(), rng);
        Self {
            covariate,
            embedding,
            combiner,
            budget: None,
        }
    }

    pub fn zeros(arch: &PennArchitecture) -> Self {
        Self {
            covariate: Mlp::zeros(arch.covariate.clone()),
            embedding: Mlp::zeros(arch.embedding.clone()),
            combiner: Mlp::zeros(arch.combiner.clone()),
            budget: None,
        }
    }

    pub fn covariate_net(&self) -> &Mlp {
        &self.covariate
    }

    pub fn embedding_net(&self) -> &Mlp {
        &self.embedding
    }

    pub fn combiner_net(&self) -> &Mlp {
        &self.combiner
    }

    pub fn subnets(&self) -> [&Mlp; 3] {
        [&self.covariate, &self.embedding, &self.combiner]
    }

    pub fn subnets_mut(&mut self) -> [&mut Mlp; 3] {
        [&mut self.covariate, &mut self.embedding, &mut self.combiner]
    }

    pub fn architecture(&self) -> PennArchitecture {
        PennArchitecture {
            covariate: self.covariate.architecture().clone(),
            embedding: self.embedding.architecture().clone(),
            combiner: self.combiner.architecture().clone(),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding.output_width()
    }

    pub fn budget(&self) -> Option<SparsityBudget> {
        self.budget
    }

    /// Records the joint sparsity budget; fails if the current nonzero count
    /// already exceeds it.
    pub fn set_budget(&mut self, budget: SparsityBudget) -> Result<()> {
        let nnz = self.nonzero_count();
        if !budget.admits(nnz) {
            return Err(Error::InvalidArgument(format!(
                "{nnz} nonzero parameters exceed budget {}",
                budget.0
            )));
        }
        self.budget = Some(budget);
        Ok(())
    }

    /// `Σ_r ‖Θ(f_r)‖₀`.
    pub fn nonzero_count(&self) -> usize {
        self.subnets().iter().map(|n| n.nonzero_count()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.subnets().iter().map(|n| n.param_count()).sum()
    }

    /// `(Θ(f₁), Θ(f₂), Θ(f₃))` concatenated.
    pub fn param_vector(&self) -> Vec<f64> {
        self.subnets().iter().flat_map(|n| n.param_vector()).collect()
    }

    pub fn set_param_vector(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if params.len() != expected {
            return Err(Error::ParamLength {
                expected,
                got: params.len(),
            });
        }
        let mut offset = 0;
        for net in self.subnets_mut() {
            let len = net.param_count();
            net.set_param_vector(&params[offset..offset + len])?;
            offset += len;
        }
        Ok(())
    }

    pub fn forward(&self, z: &[f64], omega: &[f64]) -> Result<Vec<f64>> {
        let z = ArrayView2::from_shape((1, z.len()), z).map_err(|e| Error::Shape(e.to_string()))?;
        let omega = ArrayView2::from_shape((1, omega.len()), omega).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.forward_batch(z, omega)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, z: ArrayView2<f64>, omega: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_rows(z, omega)?;
        check_binary(omega)?;
        let joined = concatenate(
            Axis(1),
            &[
                self.covariate.forward_batch(z)?.view(),
                self.embedding.forward_batch(omega)?.view(),
            ],
        )
        .map_err(|e| Error::Shape(e.to_string()))?;
        self.combiner.forward_batch(joined.view())
    }

    /// `f₂(ω)`.
    pub fn embed(&self, omega: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, omega.len()), omega).map_err(|e| Error::Shape(e.to_string()))?;
        check_binary(view)?;
        self.embedding.forward(omega)
    }

    /// Mean loss and exact gradients for `(f₁, f₂, f₃)` in that order.
    pub fn loss_and_grad(
        &self,
        z: ArrayView2<f64>,
        omega: ArrayView2<f64>,
        targets: ArrayView1<f64>,
        loss: LossKind,
    ) -> Result<(f64, [MlpGrad; 3])> {
        check_rows(z, omega)?;
        check_binary(omega)?;
        if z.nrows() == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let (cov_acts, cov_out) = self.covariate.forward_trace(z)?;
        let (emb_acts, emb_out) = self.embedding.forward_trace(omega)?;
        let split = cov_out.ncols();
        let joined = concatenate(Axis(1), &[cov_out.view(), emb_out.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        let (comb_acts, out) = self.combiner.forward_trace(joined.view())?;
        let (value, d_out) = loss_and_output_grad(&out, targets, loss)?;
        let (comb_grad, d_joined) = self.combiner.backward(&comb_acts, d_out, true);
        let d_joined = d_joined.expect("input gradient requested");
        let (cov_grad, _) = self
            .covariate
            .backward(&cov_acts, d_joined.slice(s![.., ..split]).to_owned(), false);
        let (emb_grad, _) = self
            .embedding
            .backward(&emb_acts, d_joined.slice(s![.., split..]).to_owned(), false);
        Ok((value, [cov_grad, emb_grad, comb_grad]))
    }
}

fn check_rows(z: ArrayView2<f64>, omega: ArrayView2<f64>) -> Result<()> {
    if z.nrows() != omega.nrows() {
        return Err(Error::Shape(format!(
            "{} covariate rows but {} revelation rows",
            z.nrows(),
            omega.nrows()
        )));
    }
    Ok(())
}

fn check_binary(omega: ArrayView2<f64>) -> Result<()> {
    if omega.iter().all(|&v| v == 0.0 || v == 1.0) {
        Ok(())
    } else {
        Err(Error::InvalidArgument("revelation vectors must be 0/1".into()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PennDocument {
    pub format: String,
    pub version: u32,
    pub covariate: MlpDocument,
    pub embedding: MlpDocument,
    pub combiner: MlpDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
}

pub const PENN_FORMAT: &str = "penn-pattern-embedded";

impl From<&Penn> for PennDocument {
    fn from(net: &Penn) -> Self {
        Self {
            format: PENN_FORMAT.to_string(),
            version: 1,
            covariate: (&net.covariate).into(),
            embedding: (&net.embedding).into(),
            combiner: (&net.combiner).into(),
            budget: net.budget.map(|b| b.0),
        }
    }
}

impl TryFrom<PennDocument> for Penn {
    type Error = Error;

    fn try_from(doc: PennDocument) -> Result<Self> {
        if doc.format != PENN_FORMAT || doc.version != 1 {
            return Err(Error::InvalidArgument(format!(
                "unsupported PENN document {} v{}",
                doc.format, doc.version
            )));
        }
        let mut net = Penn::new(
            doc.covariate.try_into()?,
            doc.embedding.try_into()?,
            doc.combiner.try_into()?,
        )?;
        if let Some(b) = doc.budget {
            net.set_budget(SparsityBudget(b))?;
        }
        Ok(net)
    }
}

impl Serialize for Penn {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        PennDocument::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Penn {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        Penn::try_from(PennDocument::deserialize(deserializer)?).map_err(serde::de::Error::custom)
    }
}
