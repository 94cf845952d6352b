//! Small feed-forward networks with an analytic reverse pass, flat parameter
//! storage and masked parameter perturbation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numeric::{Layout, ParamVector, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Role of a layer with respect to parameter perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    /// First layer; the analog of a token embedding.
    Input,
    Hidden,
    /// Last layer; the analog of an output head.
    Output,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    widths: Vec<usize>,
    activations: Vec<Activation>,
}

impl MlpSpec {
    /// `widths` lists input, hidden and output widths; `activations` has one
    /// entry per weight layer (`widths.len() - 1`).
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if widths.len() < 4 {
            return Err(invalid(format!(
                "an MLP needs an input layer, at least one hidden layer and an output layer \
                 (>= 4 widths), got {:?}",
                widths
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(invalid(format!("layer widths must be >= 1, got {widths:?}")));
        }
        if activations.len() != widths.len() - 1 {
            return Err(invalid(format!(
                "{} activations given for {} layers",
                activations.len(),
                widths.len() - 1
            )));
        }
        Ok(Self {
            widths,
            activations,
        })
    }

    /// tanh on every layer except an identity output layer.
    pub fn tanh(widths: Vec<usize>) -> Result<Self> {
        let layers = widths.len().saturating_sub(1);
        let mut acts = vec![Activation::Tanh; layers];
        if let Some(last) = acts.last_mut() {
            *last = Activation::Identity;
        }
        Self::new(widths, acts)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn role(&self, layer: usize) -> LayerRole {
        if layer == 0 {
            LayerRole::Input
        } else if layer + 1 == self.num_layers() {
            LayerRole::Output
        } else {
            LayerRole::Hidden
        }
    }

    /// One segment per layer: the row-major weight matrix followed by the bias.
    pub fn layout(&self) -> Layout {
        Layout::new((0..self.num_layers()).map(|l| {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            (format!("layer{l}"), fan_out * fan_in + fan_out)
        }))
    }

    pub fn num_params(&self) -> usize {
        self.layout().len()
    }

    /// Gaussian weights with std `1/sqrt(fan_in)`, zero biases.
    pub fn init(&self, rng: &mut Rng) -> ParamVector {
        let layout = self.layout();
        let mut p = ParamVector::zeros(&layout);
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let std = 1.0 / (fan_in as f64).sqrt();
            let seg = p.segment_mut(l);
            for w in &mut seg[..fan_in * fan_out] {
                *w = std * rng.normal();
            }
        }
        p
    }
}

/// Per-layer activations recorded by a forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `outputs[0]` is the input; `outputs[l + 1]` is the output of layer `l`.
    outputs: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().unwrap()
    }
}

/// A network: shared spec plus owned parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: Arc<MlpSpec>,
    params: ParamVector,
}

impl Mlp {
    pub fn new(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        Self::from_shared(Arc::new(spec), params)
    }

    pub fn from_shared(spec: Arc<MlpSpec>, params: ParamVector) -> Result<Self> {
        if params.layout() != &spec.layout() {
            return Err(invalid("parameter layout does not match network spec"));
        }
        Ok(Self { spec, params })
    }

    pub fn init(spec: MlpSpec, rng: &mut Rng) -> Self {
        let params = spec.init(rng);
        Self {
            spec: Arc::new(spec),
            params,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    /// Same architecture, different parameters.
    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        Self::from_shared(self.spec.clone(), params)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.outputs.pop().unwrap())
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        let spec = &self.spec;
        if x.len() != spec.input_width() {
            return Err(invalid(format!(
                "input has length {} but the network expects {}",
                x.len(),
                spec.input_width()
            )));
        }
        let mut outputs = Vec::with_capacity(spec.num_layers() + 1);
        outputs.push(x.to_vec());
        for l in 0..spec.num_layers() {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            let seg = self.params.segment(l);
            let (w, b) = seg.split_at(fan_in * fan_out);
            let input = &outputs[l];
            let act = spec.activations[l];
            let out: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    let z = b[o] + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>();
                    act.apply(z)
                })
                .collect();
            outputs.push(out);
        }
        Ok(Trace { outputs })
    }

    /// Gradient of `upstream . forward(x)` with respect to the parameters.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<ParamVector> {
        let trace = self.trace(x)?;
        let mut grad = ParamVector::zeros(self.params.layout());
        self.accumulate(&trace, upstream, 1.0, grad.values_mut())?;
        Ok(grad)
    }

    /// `grad += weight * d(upstream . output)/d(params)` for a recorded pass.
    pub fn accumulate(
        &self,
        trace: &Trace,
        upstream: &[f64],
        weight: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        let spec = &self.spec;
        if upstream.len() != spec.output_width() {
            return Err(invalid(format!(
                "upstream gradient has length {} but the network outputs {}",
                upstream.len(),
                spec.output_width()
            )));
        }
        if grad.len() != self.params.len() {
            return Err(invalid("gradient buffer does not match parameter count"));
        }
        let layout = self.params.layout();
        let mut delta: Vec<f64> = upstream.iter().map(|u| u * weight).collect();
        for l in (0..spec.num_layers()).rev() {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            let out = &trace.outputs[l + 1];
            let act = spec.activations[l];
            for (d, &y) in delta.iter_mut().zip(out) {
                *d *= act.slope_from_output(y);
            }
            let input = &trace.outputs[l];
            let off = layout.segments()[l].offset;
            let (gw, gb) = grad[off..off + fan_out * fan_in + fan_out].split_at_mut(fan_out * fan_in);
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, &xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                    *g += d * xi;
                }
            }
            if l > 0 {
                let w = &self.params.segment(l)[..fan_out * fan_in];
                let mut prev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, &wi) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *p += d * wi;
                    }
                }
                delta = prev;
            }
        }
        Ok(())
    }

    /// Rows are d(output_k)/d(params).
    pub fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let trace = self.trace(x)?;
        let k = self.spec.output_width();
        (0..k)
            .map(|j| {
                let mut e = vec![0.0; k];
                e[j] = 1.0;
                let mut g = vec![0.0; self.params.len()];
                self.accumulate(&trace, &e, 1.0, &mut g)?;
                Ok(g)
            })
            .collect()
    }
}

/// Which layers a parameter perturbation may touch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbMask {
    perturbable: Vec<bool>,
}

impl PerturbMask {
    pub fn new(perturbable: Vec<bool>) -> Result<Self> {
        if !perturbable.iter().any(|&p| p) {
            return Err(invalid("perturbation mask must leave at least one layer perturbable"));
        }
        Ok(Self { perturbable })
    }

    /// Hidden layers only: input and output layers stay frozen.
    pub fn hidden_only(spec: &MlpSpec) -> Self {
        Self {
            perturbable: (0..spec.num_layers())
                .map(|l| spec.role(l) == LayerRole::Hidden)
                .collect(),
        }
    }

    pub fn all(spec: &MlpSpec) -> Self {
        Self {
            perturbable: vec![true; spec.num_layers()],
        }
    }

    pub fn is_perturbable(&self, layer: usize) -> bool {
        self.perturbable.get(layer).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.perturbable.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perturbable.is_empty()
    }

    /// Zero out frozen segments of `v` in place.
    pub fn apply(&self, v: &mut ParamVector) -> Result<()> {
        self.check(v.layout())?;
        for l in 0..self.perturbable.len() {
            if !self.perturbable[l] {
                v.segment_mut(l).fill(0.0);
            }
        }
        Ok(())
    }

    fn check(&self, layout: &Layout) -> Result<()> {
        if layout.segments().len() != self.perturbable.len() {
            return Err(invalid(format!(
                "mask covers {} layers but the parameter layout has {} segments",
                self.perturbable.len(),
                layout.segments().len()
            )));
        }
        Ok(())
    }
}

/// `params + scale * direction` on perturbable segments; frozen segments are
/// copied unchanged.
pub fn perturb(
    params: &ParamVector,
    direction: &ParamVector,
    scale: f64,
    mask: &PerturbMask,
) -> Result<ParamVector> {
    params.check_layout(direction)?;
    mask.check(params.layout())?;
    let mut out = params.clone();
    if scale == 0.0 {
        return Ok(out);
    }
    for l in 0..mask.len() {
        if !mask.is_perturbable(l) {
            continue;
        }
        let d = direction.segment(l);
        for (p, &di) in out.segment_mut(l).iter_mut().zip(d) {
            *p += scale * di;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(widths: Vec<usize>, seed: u64) -> Mlp {
        Mlp::init(MlpSpec::tanh(widths).unwrap(), &mut Rng::new(seed))
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::tanh(vec![2, 3]).is_err());
        assert!(MlpSpec::tanh(vec![2, 3, 1]).is_err());
        assert!(MlpSpec::tanh(vec![2, 0, 3, 1]).is_err());
        let s = MlpSpec::tanh(vec![2, 3, 3, 1]).unwrap();
        assert_eq!(s.role(0), LayerRole::Input);
        assert_eq!(s.role(1), LayerRole::Hidden);
        assert_eq!(s.role(2), LayerRole::Output);
        assert_eq!(s.num_params(), 2 * 3 + 3 + 3 * 3 + 3 + 3 + 1);
    }

    #[test]
    fn identity_network_is_identity() {
        let spec = MlpSpec::new(vec![3, 3, 3, 3], vec![Activation::Identity; 3]).unwrap();
        let mut p = ParamVector::zeros(&spec.layout());
        for l in 0..3 {
            let seg = p.segment_mut(l);
            for i in 0..3 {
                seg[i * 3 + i] = 1.0;
            }
        }
        let m = Mlp::new(spec, p).unwrap();
        let x = [0.5, -1.25, 3.0];
        assert_eq!(m.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = MlpSpec::tanh(vec![2, 4, 4, 3]).unwrap();
        let m = Mlp::new(spec.clone(), ParamVector::zeros(&spec.layout())).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn forward_is_deterministic_and_checks_shape() {
        let m = net(vec![2, 5, 5, 2], 1);
        let a = m.forward(&[0.1, 0.2]).unwrap();
        let b = m.forward(&[0.1, 0.2]).unwrap();
        assert_eq!(a, b);
        assert!(m.forward(&[0.1]).is_err());
        assert!(m.backward(&[0.1, 0.2], &[1.0]).is_err());
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let m = net(vec![3, 6, 6, 2], 5);
        let x = [0.3, -0.7, 1.1];
        let zero = m.backward(&x, &[0.0, 0.0]).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        let g = m.backward(&x, &[0.4, -1.3]).unwrap();
        let g3 = m.backward(&x, &[1.2, -3.9]).unwrap();
        for (a, b) in g.values().iter().zip(g3.values()) {
            assert!((3.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn perturb_respects_mask() {
        let m = net(vec![2, 4, 4, 1], 2);
        let spec = m.spec();
        let mask = PerturbMask::hidden_only(spec);
        let dir = spec.init(&mut Rng::new(9));
        let p = m.params();
        assert_eq!(perturb(p, &dir, 0.0, &mask).unwrap(), *p);
        let q = perturb(p, &dir, 0.5, &mask).unwrap();
        assert_eq!(q.segment(0), p.segment(0));
        assert_eq!(q.segment(2), p.segment(2));
        for ((a, b), d) in q.segment(1).iter().zip(p.segment(1)).zip(dir.segment(1)) {
            assert_eq!(*a, b + 0.5 * d);
        }
        let all = perturb(p, &dir, 1e-3, &PerturbMask::all(spec)).unwrap();
        for ((a, b), d) in all.values().iter().zip(p.values()).zip(dir.values()) {
            assert_eq!(*a, b + 1e-3 * d);
        }
    }

    #[test]
    fn mask_needs_a_perturbable_layer() {
        assert!(PerturbMask::new(vec![false, false]).is_err());
        let spec = MlpSpec::tanh(vec![2, 3, 3, 1]).unwrap();
        let bad = PerturbMask::new(vec![true]).unwrap();
        let p = spec.init(&mut Rng::new(1));
        assert!(perturb(&p, &p, 1.0, &bad).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use crate::numeric::Rng;

        proptest! {
            #[test]
            fn perturb_round_trip(seed in any::<u64>(), scale in -10.0f64..10.0) {
                let m = net(vec![3, 5, 4, 2], seed);
                let dir = m.spec().init(&mut Rng::new(seed ^ 0xABCD));
                let mask = PerturbMask::hidden_only(m.spec());
                let there = perturb(m.params(), &dir, scale, &mask).unwrap();
                let back = perturb(&there, &dir, -scale, &mask).unwrap();
                for (a, b) in back.values().iter().zip(m.params().values()) {
                    prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
                }
            }
        }
    }
}
