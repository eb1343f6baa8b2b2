use rand::{Rng, RngCore};

use super::density::{
    by_row, check_component, check_x, check_ys, gaussian_log_probs, ConditionalDensity, ModelKind,
};
use super::masks::MaskSet;
use crate::diffcore::{AdamState, DropoutMask, Graph, Mat, MlpSpec, ParamStore, Var};
use crate::error::{Error, Result};
use crate::flows::{ConditionalGaussianBase, Normalizer};
use crate::gaussian::DiagGaussian;
use crate::training::Trainable;

/// Network x ↦ N(μ(x), diag σ(x)²) on standardised data.
#[derive(Debug, Clone)]
pub struct GaussianNet {
    head: ConditionalGaussianBase,
    store: ParamStore,
    norm: Normalizer,
    normalized: bool,
    x_dim: usize,
    y_dim: usize,
}

impl GaussianNet {
    pub fn new<R: Rng + ?Sized>(x_dim: usize, y_dim: usize, layers: usize, units: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let head = ConditionalGaussianBase::new(&mut store, MlpSpec::new(x_dim, layers, units, 2 * y_dim), rng);
        Self {
            head,
            store,
            norm: Normalizer::identity(x_dim, y_dim),
            normalized: false,
            x_dim,
            y_dim,
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.head.net().spec().hidden_widths()
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.norm
    }

    pub(crate) fn replace_params(&mut self, store: ParamStore) -> Result<()> {
        if store.slices() != self.store.slices() {
            return Err(Error::Format("parameter layout does not match the network".into()));
        }
        self.store = store;
        Ok(())
    }

    pub(crate) fn ensure_normalized(&mut self, xs: &Mat, ys: &Mat) {
        if !self.normalized {
            self.norm = Normalizer::fit(xs, ys);
            self.normalized = true;
        }
    }

    pub(crate) fn set_normalizer(&mut self, norm: Normalizer) -> Result<()> {
        if norm.x_shift.len() != self.x_dim || norm.y_shift.len() != self.y_dim {
            return Err(Error::Shape("normalizer dimensions do not match the network".into()));
        }
        self.norm = norm;
        self.normalized = true;
        Ok(())
    }

    pub fn spec(&self) -> &MlpSpec {
        self.head.net().spec()
    }

    /// Mean negative log-likelihood of a batch under one mask.
    pub fn nll_loss(&self, g: &Graph, xs: &Mat, ys: &Mat, mask: Option<&DropoutMask>) -> Result<Var> {
        if ys.nrows() == 0 {
            return Err(Error::Usage("nll_loss on an empty batch".into()));
        }
        check_ys(ys, self.y_dim)?;
        let cond = g.constant(self.norm.norm_xs(xs));
        let (mu, sigma) = self.head.graph(g, &self.store, cond, mask)?;
        let z = g.constant(self.norm.norm_ys(ys));
        let lp = ConditionalGaussianBase::log_prob_graph(g, z, mu, sigma)?;
        Ok(g.shift(g.neg(g.mean(lp)), self.norm.log_scale()))
    }

    /// The predictive Gaussian at `x` in original units.
    pub fn gaussian(&self, x: &[f64], mask: Option<&DropoutMask>) -> Result<DiagGaussian> {
        check_x(x, self.x_dim)?;
        let g = self.head.gaussian(&self.store, &self.norm.norm_x(x), mask)?;
        Ok(self.denorm(g))
    }

    /// Predictive Gaussians for a batch of inputs under one mask.
    pub fn gaussians(&self, xs: &Mat, mask: Option<&DropoutMask>) -> Result<Vec<DiagGaussian>> {
        if xs.ncols() != self.x_dim {
            return Err(Error::Shape(format!("x has {} columns, expected {}", xs.ncols(), self.x_dim)));
        }
        if xs.nrows() == 0 {
            return Ok(Vec::new());
        }
        let g = Graph::new();
        let cond = g.constant(self.norm.norm_xs(xs));
        let (mu, sigma) = self.head.graph(&g, &self.store, cond, mask)?;
        let (mu, sigma) = (g.value(mu), g.value(sigma));
        Ok((0..xs.nrows())
            .map(|i| self.denorm(DiagGaussian::new(mu.row(i).to_vec(), sigma.row(i).to_vec())))
            .collect())
    }

    fn denorm(&self, g: DiagGaussian) -> DiagGaussian {
        let mean = g
            .mean
            .iter()
            .zip(self.norm.y_shift.iter().zip(&self.norm.y_scale))
            .map(|(m, (c, s))| c + s * m)
            .collect();
        let std = g.std.iter().zip(&self.norm.y_scale).map(|(v, s)| v * s).collect();
        DiagGaussian::new(mean, std)
    }
}

/// Probabilistic network ensemble: `M` fixed masks over one Gaussian
/// network, each mask a Gaussian component.
#[derive(Debug, Clone)]
pub struct PneModel {
    net: GaussianNet,
    m: usize,
    keep_prob: f64,
    masks: Option<MaskSet>,
    opt: AdamState,
}

impl PneModel {
    pub fn new<R: Rng + ?Sized>(
        x_dim: usize,
        y_dim: usize,
        layers: usize,
        units: usize,
        m: usize,
        keep_prob: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let net = GaussianNet::new(x_dim, y_dim, layers, units, rng);
        let masks = MaskSet::generate(m, &net.hidden_widths(), keep_prob, rng)?;
        let opt = AdamState::new(net.params().len());
        Ok(Self {
            net,
            m,
            keep_prob,
            masks: Some(masks),
            opt,
        })
    }

    pub fn net(&self) -> &GaussianNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut GaussianNet {
        &mut self.net
    }

    pub fn mask_set(&self) -> &MaskSet {
        self.masks.as_ref().expect("mask set present after construction")
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    /// Component Gaussians for every row of `xs`: `out[w][i]`.
    pub fn component_gaussians(&self, xs: &Mat) -> Result<Vec<Vec<DiagGaussian>>> {
        self.mask_set().masks().iter().map(|m| self.net.gaussians(xs, Some(m))).collect()
    }

    pub(crate) fn restore(&mut self, store: ParamStore, masks: MaskSet) -> Result<()> {
        if masks.len() != self.m {
            return Err(Error::Format("mask section does not match the model".into()));
        }
        masks.verify()?;
        self.net.replace_params(store)?;
        self.opt = AdamState::new(self.net.params().len());
        self.masks = Some(masks);
        Ok(())
    }
}

impl Trainable for PneModel {
    fn n_train_components(&self) -> usize {
        self.m
    }

    fn batch_loss(&self, g: &Graph, xs: &Mat, ys: &Mat, component: usize, _rng: &mut dyn RngCore) -> Result<Var> {
        self.net.nll_loss(g, xs, ys, Some(self.mask_set().get(component)?))
    }

    fn optim_parts(&mut self) -> (&mut ParamStore, &mut AdamState) {
        (&mut self.net.store, &mut self.opt)
    }
}

impl ConditionalDensity for PneModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Pne
    }

    fn x_dim(&self) -> usize {
        self.net.x_dim
    }

    fn y_dim(&self) -> usize {
        self.net.y_dim
    }

    fn n_components(&self) -> usize {
        self.m
    }

    fn component_log_prob(&self, w: usize, x: &[f64], ys: &Mat) -> Result<Vec<f64>> {
        check_ys(ys, self.net.y_dim)?;
        let g = self.net.gaussian(x, Some(self.mask_set().get(w)?))?;
        Ok(gaussian_log_probs(&g, ys))
    }

    fn component_sample(&self, w: usize, x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<Mat> {
        let g = self.net.gaussian(x, Some(self.mask_set().get(w)?))?;
        Ok(g.sample(n, rng))
    }

    fn gaussian_components(&self, x: &[f64]) -> Option<Result<Vec<DiagGaussian>>> {
        Some(
            self.mask_set()
                .masks()
                .iter()
                .map(|m| self.net.gaussian(x, Some(m)))
                .collect(),
        )
    }

    fn gaussian_components_batch(&self, xs: &Mat) -> Option<Result<Vec<Vec<DiagGaussian>>>> {
        Some(self.component_gaussians(xs).map(by_row))
    }

    fn aleatoric_closed_form(&self) -> bool {
        true
    }
}

/// One Gaussian network trained under fresh Bernoulli masks each step; at
/// test time a fixed set of drawn masks defines the components.
#[derive(Debug, Clone)]
pub struct McDropoutModel {
    net: GaussianNet,
    keep_prob: f64,
    n_test_masks: usize,
    test_masks: Option<MaskSet>,
    opt: AdamState,
}

impl McDropoutModel {
    pub fn new<R: Rng + ?Sized>(
        x_dim: usize,
        y_dim: usize,
        layers: usize,
        units: usize,
        n_test_masks: usize,
        keep_prob: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let net = GaussianNet::new(x_dim, y_dim, layers, units, rng);
        let opt = AdamState::new(net.params().len());
        let mut model = Self {
            net,
            keep_prob,
            n_test_masks,
            test_masks: None,
            opt,
        };
        model.redraw_test_masks(rng)?;
        Ok(model)
    }

    pub fn net(&self) -> &GaussianNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut GaussianNet {
        &mut self.net
    }

    pub fn test_masks(&self) -> &MaskSet {
        self.test_masks.as_ref().expect("test masks present after construction")
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    pub fn redraw_test_masks<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.test_masks = Some(MaskSet::generate(
            self.n_test_masks,
            &self.net.hidden_widths(),
            self.keep_prob,
            rng,
        )?);
        Ok(())
    }

    pub fn component_gaussians(&self, xs: &Mat) -> Result<Vec<Vec<DiagGaussian>>> {
        self.test_masks().masks().iter().map(|m| self.net.gaussians(xs, Some(m))).collect()
    }

    pub(crate) fn restore(&mut self, store: ParamStore, masks: MaskSet) -> Result<()> {
        if masks.len() != self.n_test_masks {
            return Err(Error::Format("mask section does not match the model".into()));
        }
        masks.verify()?;
        self.net.replace_params(store)?;
        self.opt = AdamState::new(self.net.params().len());
        self.test_masks = Some(masks);
        Ok(())
    }
}

impl Trainable for McDropoutModel {
    fn n_train_components(&self) -> usize {
        1
    }

    fn batch_loss(&self, g: &Graph, xs: &Mat, ys: &Mat, _component: usize, rng: &mut dyn RngCore) -> Result<Var> {
        let mask = DropoutMask::generate(&self.net.hidden_widths(), self.keep_prob, rng)?;
        self.net.nll_loss(g, xs, ys, Some(&mask))
    }

    fn optim_parts(&mut self) -> (&mut ParamStore, &mut AdamState) {
        (&mut self.net.store, &mut self.opt)
    }
}

impl ConditionalDensity for McDropoutModel {
    fn kind(&self) -> ModelKind {
        ModelKind::McDropout
    }

    fn x_dim(&self) -> usize {
        self.net.x_dim
    }

    fn y_dim(&self) -> usize {
        self.net.y_dim
    }

    fn n_components(&self) -> usize {
        self.n_test_masks
    }

    fn component_log_prob(&self, w: usize, x: &[f64], ys: &Mat) -> Result<Vec<f64>> {
        check_component(w, self.n_test_masks)?;
        check_ys(ys, self.net.y_dim)?;
        let g = self.net.gaussian(x, Some(self.test_masks().get(w)?))?;
        Ok(gaussian_log_probs(&g, ys))
    }

    fn component_sample(&self, w: usize, x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<Mat> {
        check_component(w, self.n_test_masks)?;
        let g = self.net.gaussian(x, Some(self.test_masks().get(w)?))?;
        Ok(g.sample(n, rng))
    }

    fn gaussian_components(&self, x: &[f64]) -> Option<Result<Vec<DiagGaussian>>> {
        Some(
            self.test_masks()
                .masks()
                .iter()
                .map(|m| self.net.gaussian(x, Some(m)))
                .collect(),
        )
    }

    fn gaussian_components_batch(&self, xs: &Mat) -> Option<Result<Vec<Vec<DiagGaussian>>>> {
        Some(self.component_gaussians(xs).map(by_row))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use crate::training::{train, TrainConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn repeated_point_collapses_to_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pne = PneModel::new(1, 1, 3, 50, 5, 0.5, &mut rng).unwrap();
        let xs = Array2::from_elem((32, 1), 1.5);
        let ys = Array2::from_elem((32, 1), -0.7);
        pne.net.ensure_normalized(&xs, &ys);
        let cfg = TrainConfig {
            steps: 3000,
            batch_size: 16,
            lr: 1e-2,
        };
        let log = train(&mut pne, &xs, &ys, &cfg, &mut rng).unwrap();
        assert!(log.last().unwrap() < &log[0]);
        for w in 0..5 {
            let g = pne.net.gaussian(&[1.5], Some(pne.mask_set().get(w).unwrap())).unwrap();
            assert!((g.mean[0] + 0.7).abs() < 1e-2, "mean {}", g.mean[0]);
            assert!(g.std[0] < 2e-3, "std {}", g.std[0]);
        }
    }

    #[test]
    fn batched_and_single_gaussians_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pne = PneModel::new(2, 2, 2, 10, 3, 0.5, &mut rng).unwrap();
        let xs = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-1.0..1.0));
        let batch = pne.component_gaussians(&xs).unwrap();
        for w in 0..3 {
            for i in 0..4 {
                let single = pne
                    .net
                    .gaussian(&xs.row(i).to_vec(), Some(pne.mask_set().get(w).unwrap()))
                    .unwrap();
                for d in 0..2 {
                    assert!((single.mean[d] - batch[w][i].mean[d]).abs() < 1e-12);
                    assert!((single.std[d] - batch[w][i].std[d]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn test_masks_reproducible() {
        let a = McDropoutModel::new(1, 1, 2, 30, 20, 0.5, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let b = McDropoutModel::new(1, 1, 2, 30, 20, 0.5, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a.test_masks(), b.test_masks());
        assert_eq!(a.n_components(), 20);
    }
}
