use rand::{Rng, RngCore};

use super::density::{check_component, mix_rows, BaseSpace, ConditionalDensity, EstimatorKind, ModelKind};
use super::masks::MaskSet;
use crate::diffcore::{AdamState, DropoutMask, Graph, Mat, ParamStore, Var};
use crate::error::{Error, Result};
use crate::flows::{Cond, FlowConfig, FlowMasks, FlowModel, Normalizer};
use crate::gaussian::DiagGaussian;
use crate::training::Trainable;

fn mask_set<R: Rng + ?Sized>(widths: &[usize], m: usize, keep_prob: f64, rng: &mut R) -> Result<MaskSet> {
    if keep_prob >= 1.0 && m == 1 {
        MaskSet::from_masks(vec![DropoutMask::full(widths)])
    } else {
        MaskSet::generate(m, widths, keep_prob, rng)
    }
}

/// Ensemble in the spline transforms: every conditioner carries `M` fixed
/// masks, the base network is shared.
#[derive(Debug, Clone)]
pub struct NflowsOutModel {
    kind: ModelKind,
    flow: FlowModel,
    m: usize,
    keep_prob: f64,
    normalized: bool,
    masks: Vec<MaskSet>,
    opt: AdamState,
}

impl NflowsOutModel {
    pub fn new<R: Rng + ?Sized>(config: FlowConfig, m: usize, keep_prob: f64, rng: &mut R) -> Result<Self> {
        let flow = FlowModel::new(config, rng)?;
        let masks = flow
            .transforms()
            .iter()
            .map(|t| mask_set(&t.conditioner().spec().hidden_widths(), m, keep_prob, rng))
            .collect::<Result<Vec<_>>>()?;
        let kind = if m == 1 && keep_prob >= 1.0 {
            ModelKind::Nflows
        } else {
            ModelKind::NflowsOut
        };
        let opt = AdamState::new(flow.params().len());
        Ok(Self {
            kind,
            flow,
            m,
            keep_prob,
            normalized: false,
            masks,
            opt,
        })
    }

    /// Single unmasked flow.
    pub fn single<R: Rng + ?Sized>(config: FlowConfig, rng: &mut R) -> Result<Self> {
        Self::new(config, 1, 1.0, rng)
    }

    pub fn flow(&self) -> &FlowModel {
        &self.flow
    }

    pub fn flow_mut(&mut self) -> &mut FlowModel {
        &mut self.flow
    }

    pub fn mask_sets(&self) -> &[MaskSet] {
        &self.masks
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    pub fn component_masks(&self, w: usize) -> Result<FlowMasks<'_>> {
        check_component(w, self.m)?;
        Ok(FlowMasks {
            base: None,
            transforms: self.masks.iter().map(|s| Some(&s.masks()[w])).collect(),
        })
    }

    pub(crate) fn restore(&mut self, store: ParamStore, masks: Vec<MaskSet>) -> Result<()> {
        if masks.len() != self.flow.n_layers() || masks.iter().any(|s| s.len() != self.m) {
            return Err(Error::Format("mask section does not match the model".into()));
        }
        for s in &masks {
            s.verify()?;
        }
        self.flow.replace_params(store)?;
        self.opt = AdamState::new(self.flow.params().len());
        self.masks = masks;
        Ok(())
    }

    pub(crate) fn ensure_normalized(&mut self, xs: &Mat, ys: &Mat) -> Result<()> {
        if !self.normalized {
            self.set_normalizer(Normalizer::fit(xs, ys))?;
        }
        Ok(())
    }

    pub(crate) fn set_normalizer(&mut self, norm: Normalizer) -> Result<()> {
        self.flow.set_normalizer(norm)?;
        self.normalized = true;
        Ok(())
    }
}

impl Trainable for NflowsOutModel {
    fn n_train_components(&self) -> usize {
        self.m
    }

    fn batch_loss(&self, g: &Graph, xs: &Mat, ys: &Mat, component: usize, _rng: &mut dyn RngCore) -> Result<Var> {
        self.flow.nll_loss(g, xs, ys, &self.component_masks(component)?)
    }

    fn optim_parts(&mut self) -> (&mut ParamStore, &mut AdamState) {
        (self.flow.params_mut(), &mut self.opt)
    }
}

impl ConditionalDensity for NflowsOutModel {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn x_dim(&self) -> usize {
        self.flow.x_dim()
    }

    fn y_dim(&self) -> usize {
        self.flow.y_dim()
    }

    fn n_components(&self) -> usize {
        self.m
    }

    fn component_log_prob(&self, w: usize, x: &[f64], ys: &Mat) -> Result<Vec<f64>> {
        self.flow.log_prob_batch(Cond::Shared(x), ys, &self.component_masks(w)?)
    }

    fn component_sample(&self, w: usize, x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<Mat> {
        self.flow.sample(x, n, rng, &self.component_masks(w)?)
    }
}

/// Ensemble in the base distribution: the base network carries `M` fixed
/// masks, the spline chain is shared.
#[derive(Debug, Clone)]
pub struct NflowsBaseModel {
    flow: FlowModel,
    m: usize,
    keep_prob: f64,
    normalized: bool,
    masks: Option<MaskSet>,
    opt: AdamState,
}

impl NflowsBaseModel {
    pub fn new<R: Rng + ?Sized>(config: FlowConfig, m: usize, keep_prob: f64, rng: &mut R) -> Result<Self> {
        let flow = FlowModel::new(config, rng)?;
        let widths = flow.base().net().spec().hidden_widths();
        let masks = mask_set(&widths, m, keep_prob, rng)?;
        let opt = AdamState::new(flow.params().len());
        Ok(Self {
            flow,
            m,
            keep_prob,
            normalized: false,
            masks: Some(masks),
            opt,
        })
    }

    pub fn flow(&self) -> &FlowModel {
        &self.flow
    }

    pub fn flow_mut(&mut self) -> &mut FlowModel {
        &mut self.flow
    }

    pub fn mask_set(&self) -> &MaskSet {
        self.masks.as_ref().expect("mask set present after construction")
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    pub fn component_masks(&self, w: usize) -> Result<FlowMasks<'_>> {
        check_component(w, self.m)?;
        Ok(FlowMasks {
            base: Some(self.mask_set().get(w)?),
            transforms: Vec::new(),
        })
    }

    pub(crate) fn restore(&mut self, store: ParamStore, masks: MaskSet) -> Result<()> {
        if masks.len() != self.m {
            return Err(Error::Format("mask section does not match the model".into()));
        }
        masks.verify()?;
        self.flow.replace_params(store)?;
        self.opt = AdamState::new(self.flow.params().len());
        self.masks = Some(masks);
        Ok(())
    }

    pub(crate) fn ensure_normalized(&mut self, xs: &Mat, ys: &Mat) -> Result<()> {
        if !self.normalized {
            self.set_normalizer(Normalizer::fit(xs, ys))?;
        }
        Ok(())
    }

    pub(crate) fn set_normalizer(&mut self, norm: Normalizer) -> Result<()> {
        self.flow.set_normalizer(norm)?;
        self.normalized = true;
        Ok(())
    }

    fn base_log_probs(&self, x: &[f64], ys: &Mat, comps: &[usize]) -> Result<Vec<Vec<f64>>> {
        let (b, ld) = self.flow.inverse_transform(ys, Cond::Shared(x), &FlowMasks::none())?;
        comps
            .iter()
            .map(|&w| {
                let g = self.flow.base_gaussian(x, Some(self.mask_set().get(w)?))?;
                Ok(b.rows()
                    .into_iter()
                    .zip(&ld)
                    .map(|(r, l)| g.log_prob(&r.to_vec()) + l)
                    .collect())
            })
            .collect()
    }
}

impl Trainable for NflowsBaseModel {
    fn n_train_components(&self) -> usize {
        self.m
    }

    fn batch_loss(&self, g: &Graph, xs: &Mat, ys: &Mat, component: usize, _rng: &mut dyn RngCore) -> Result<Var> {
        self.flow.nll_loss(g, xs, ys, &self.component_masks(component)?)
    }

    fn optim_parts(&mut self) -> (&mut ParamStore, &mut AdamState) {
        (self.flow.params_mut(), &mut self.opt)
    }
}

impl ConditionalDensity for NflowsBaseModel {
    fn kind(&self) -> ModelKind {
        ModelKind::NflowsBase
    }

    fn x_dim(&self) -> usize {
        self.flow.x_dim()
    }

    fn y_dim(&self) -> usize {
        self.flow.y_dim()
    }

    fn n_components(&self) -> usize {
        self.m
    }

    fn component_log_prob(&self, w: usize, x: &[f64], ys: &Mat) -> Result<Vec<f64>> {
        check_component(w, self.m)?;
        Ok(self.base_log_probs(x, ys, &[w])?.remove(0))
    }

    fn mixture_log_prob(&self, x: &[f64], ys: &Mat) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..self.m).collect();
        Ok(mix_rows(&self.base_log_probs(x, ys, &all)?, ys.nrows()))
    }

    fn component_sample(&self, w: usize, x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<Mat> {
        self.flow.sample(x, n, rng, &self.component_masks(w)?)
    }

    fn base_space(&self) -> Option<&dyn BaseSpace> {
        Some(self)
    }

    fn estimator(&self) -> EstimatorKind {
        EstimatorKind::AnalyticBase
    }
}

impl BaseSpace for NflowsBaseModel {
    fn base_components(&self, x: &[f64]) -> Result<Vec<DiagGaussian>> {
        self.mask_set()
            .masks()
            .iter()
            .map(|m| self.flow.base_gaussian(x, Some(m)))
            .collect()
    }

    fn to_output(&self, x: &[f64], b: &Mat) -> Result<(Mat, Vec<f64>)> {
        self.flow.forward_transform(b, Cond::Shared(x), &FlowMasks::none())
    }

    fn to_base(&self, x: &[f64], y: &Mat) -> Result<(Mat, Vec<f64>)> {
        self.flow.inverse_transform(y, Cond::Shared(x), &FlowMasks::none())
    }
}
