use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Affine { inputs: usize, outputs: usize },
    Act(Activation),
}

/// Arithmetic used inside forward and backward passes. Parameters and the
/// public API stay `f64` either way.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Layer stack of a dense network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetSpec {
    layers: Vec<Layer>,
}

impl NetSpec {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let mut width: Option<usize> = None;
        for layer in &layers {
            if let Layer::Affine { inputs, outputs } = *layer {
                if inputs == 0 || outputs == 0 {
                    return Err(Error::invalid("affine layer with zero width"));
                }
                if let Some(w) = width {
                    if w != inputs {
                        return Err(Error::invalid(format!(
                            "affine layer expects {inputs} inputs but receives {w}"
                        )));
                    }
                }
                width = Some(outputs);
            } else if width.is_none() {
                return Err(Error::invalid("network must start with an affine layer"));
            }
        }
        if width.is_none() {
            return Err(Error::invalid("network has no affine layer"));
        }
        Ok(Self { layers })
    }

    /// Dense stack `input -> hidden... -> output` with `hidden_act` after every
    /// hidden layer and an optional activation on the output head.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        head: Option<Activation>,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut prev = input;
        for &h in hidden {
            layers.push(Layer::Affine { inputs: prev, outputs: h });
            layers.push(Layer::Act(hidden_act));
            prev = h;
        }
        layers.push(Layer::Affine { inputs: prev, outputs: output });
        if let Some(a) = head {
            layers.push(Layer::Act(a));
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match l {
                Layer::Affine { inputs, .. } => Some(*inputs),
                _ => None,
            })
            .expect("validated spec")
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Affine { outputs, .. } => Some(*outputs),
                _ => None,
            })
            .expect("validated spec")
    }

    fn affine_names(k: usize) -> (String, String) {
        (format!("fc{k}.weight"), format!("fc{k}.bias"))
    }
}

pub trait Real:
    num_traits::Float + std::ops::AddAssign + std::iter::Sum + Send + Sync + 'static
{
    fn cast(v: f64) -> Self;
    fn widen(self) -> f64;
}

impl Real for f64 {
    fn cast(v: f64) -> Self {
        v
    }
    fn widen(self) -> f64 {
        self
    }
}

impl Real for f32 {
    fn cast(v: f64) -> Self {
        v as f32
    }
    fn widen(self) -> f64 {
        self as f64
    }
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

/// Dense feed-forward network with reverse-mode gradients.
#[derive(Debug)]
pub struct Mlp {
    spec: NetSpec,
    params: ParamStore,
    precision: Precision,
    id: u64,
    generation: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            params: self.params.clone(),
            precision: self.precision,
            id: fresh_id(),
            generation: 0,
        }
    }
}

enum Cache {
    F64(Vec<Vec<f64>>),
    F32(Vec<Vec<f32>>),
}

/// Evaluation record from [`Mlp::forward`], consumed by the gradient calls.
pub struct Trace {
    net_id: u64,
    generation: u64,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    batch: usize,
    cache: Cache,
}

impl Mlp {
    /// Weights uniform in `[-s, s]` with `s = sqrt(1 / fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let mut k = 0;
        for layer in spec.layers() {
            if let Layer::Affine { inputs, outputs } = *layer {
                let s = (1.0 / inputs as f64).sqrt();
                let w: Vec<f64> = (0..inputs * outputs)
                    .map(|_| rng.random_range(-s..=s))
                    .collect();
                let (wn, bn) = NetSpec::affine_names(k);
                params
                    .insert(wn, Tensor::matrix(outputs, inputs, w).expect("finite init"))
                    .expect("unique names");
                params
                    .insert(bn, Tensor::zeros(vec![outputs]))
                    .expect("unique names");
                k += 1;
            }
        }
        Self::from_parts(spec, params).expect("consistent init")
    }

    /// All parameters zero.
    pub fn zeros(spec: NetSpec) -> Self {
        let mut params = ParamStore::new();
        let mut k = 0;
        for layer in spec.layers() {
            if let Layer::Affine { inputs, outputs } = *layer {
                let (wn, bn) = NetSpec::affine_names(k);
                params.insert(wn, Tensor::zeros(vec![outputs, inputs])).expect("unique");
                params.insert(bn, Tensor::zeros(vec![outputs])).expect("unique");
                k += 1;
            }
        }
        Self::from_parts(spec, params).expect("consistent zeros")
    }

    pub fn from_parts(spec: NetSpec, params: ParamStore) -> Result<Self> {
        let template = Self::zeros_store(&spec);
        template.check_same_layout(&params)?;
        Ok(Self {
            spec,
            params,
            precision: Precision::F64,
            id: fresh_id(),
            generation: 0,
        })
    }

    fn zeros_store(spec: &NetSpec) -> ParamStore {
        let mut params = ParamStore::new();
        let mut k = 0;
        for layer in spec.layers() {
            if let Layer::Affine { inputs, outputs } = *layer {
                let (wn, bn) = NetSpec::affine_names(k);
                params.insert(wn, Tensor::zeros(vec![outputs, inputs])).expect("unique");
                params.insert(bn, Tensor::zeros(vec![outputs])).expect("unique");
                k += 1;
            }
        }
        params
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Mutable parameter access. Invalidates all outstanding traces.
    pub fn params_mut(&mut self) -> &mut ParamStore {
        self.generation += 1;
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let ok = match x.shape().len() {
            1 | 2 => x.cols() == self.input_dim(),
            _ => false,
        };
        if !ok {
            return Err(Error::Shape {
                context: "network input",
                expected: vec![self.input_dim()],
                actual: x.shape().to_vec(),
            });
        }
        x.ensure_finite("network input")?;
        Ok(x.rows())
    }

    fn output_shape(&self, x: &Tensor) -> Vec<usize> {
        if x.shape().len() == 1 {
            vec![self.output_dim()]
        } else {
            vec![x.rows(), self.output_dim()]
        }
    }

    /// Evaluates the network and keeps the activations needed for gradients.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Trace)> {
        let batch = self.check_input(x)?;
        let cache = match self.precision {
            Precision::F64 => Cache::F64(self.run::<f64>(x.data(), batch)),
            Precision::F32 => Cache::F32(self.run::<f32>(x.data(), batch)),
        };
        let out: Vec<f64> = match &cache {
            Cache::F64(c) => c.last().expect("non-empty").clone(),
            Cache::F32(c) => c.last().expect("non-empty").iter().map(|v| v.widen()).collect(),
        };
        let output_shape = self.output_shape(x);
        let y = Tensor::from_parts_unchecked(output_shape.clone(), out)?;
        y.ensure_finite("network output")?;
        let trace = Trace {
            net_id: self.id,
            generation: self.generation,
            input_shape: x.shape().to_vec(),
            output_shape,
            batch,
            cache,
        };
        Ok((y, trace))
    }

    /// Evaluates the network without keeping a trace.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    fn check_trace(&self, trace: &Trace, upstream: &Tensor) -> Result<()> {
        if trace.net_id != self.id || trace.generation != self.generation {
            return Err(Error::StaleTrace);
        }
        if upstream.len() != trace.batch * self.output_dim() {
            return Err(Error::Shape {
                context: "upstream gradient",
                expected: trace.output_shape.clone(),
                actual: upstream.shape().to_vec(),
            });
        }
        upstream.ensure_finite("upstream gradient")
    }

    /// Gradients of `<upstream, output>` with respect to parameters and input.
    pub fn backward(&self, trace: &Trace, upstream: &Tensor) -> Result<(ParamStore, Tensor)> {
        self.check_trace(trace, upstream)?;
        let mut grads = self.params.zeros_like();
        let dx = match &trace.cache {
            Cache::F64(c) => self.backprop::<f64>(c, trace.batch, upstream.data(), Some(&mut grads)),
            Cache::F32(c) => self.backprop::<f32>(c, trace.batch, upstream.data(), Some(&mut grads)),
        };
        let dx = Tensor::from_parts_unchecked(trace.input_shape.clone(), dx)?;
        Ok((grads, dx))
    }

    pub fn grad_params(&self, trace: &Trace, upstream: &Tensor) -> Result<ParamStore> {
        Ok(self.backward(trace, upstream)?.0)
    }

    /// Input gradient only; skips the weight-gradient accumulation.
    pub fn grad_input(&self, trace: &Trace, upstream: &Tensor) -> Result<Tensor> {
        self.check_trace(trace, upstream)?;
        let dx = match &trace.cache {
            Cache::F64(c) => self.backprop::<f64>(c, trace.batch, upstream.data(), None),
            Cache::F32(c) => self.backprop::<f32>(c, trace.batch, upstream.data(), None),
        };
        Tensor::from_parts_unchecked(trace.input_shape.clone(), dx)
    }

    fn cast_params<T: Real>(&self) -> Vec<(Vec<T>, Vec<T>)> {
        let n_affine = self.params.len() / 2;
        (0..n_affine)
            .map(|k| {
                let (wn, bn) = NetSpec::affine_names(k);
                let w = self.params.get(&wn).expect("layout checked");
                let b = self.params.get(&bn).expect("layout checked");
                (
                    w.data().iter().map(|&v| T::cast(v)).collect(),
                    b.data().iter().map(|&v| T::cast(v)).collect(),
                )
            })
            .collect()
    }

    /// Returns the input followed by the output of every layer.
    fn run<T: Real>(&self, x: &[f64], batch: usize) -> Vec<Vec<T>> {
        let weights = self.cast_params::<T>();
        let mut outs: Vec<Vec<T>> = Vec::with_capacity(self.spec.layers().len() + 1);
        outs.push(x.iter().map(|&v| T::cast(v)).collect());
        let mut k = 0;
        for layer in self.spec.layers() {
            let input = outs.last().expect("non-empty");
            let next = match *layer {
                Layer::Affine { inputs, outputs } => {
                    let (w, b) = &weights[k];
                    k += 1;
                    let mut y = Vec::with_capacity(batch * outputs);
                    for r in 0..batch {
                        let xr = &input[r * inputs..(r + 1) * inputs];
                        for j in 0..outputs {
                            let wj = &w[j * inputs..(j + 1) * inputs];
                            let mut s = b[j];
                            for (a, c) in xr.iter().zip(wj) {
                                s += *a * *c;
                            }
                            y.push(s);
                        }
                    }
                    y
                }
                Layer::Act(Activation::Relu) => input
                    .iter()
                    .map(|&v| if v > T::zero() { v } else { T::zero() })
                    .collect(),
                Layer::Act(Activation::Tanh) => input.iter().map(|v| v.tanh()).collect(),
            };
            outs.push(next);
        }
        outs
    }

    fn backprop<T: Real>(
        &self,
        cache: &[Vec<T>],
        batch: usize,
        upstream: &[f64],
        mut grads: Option<&mut ParamStore>,
    ) -> Vec<f64> {
        let weights = self.cast_params::<T>();
        let mut delta: Vec<T> = upstream.iter().map(|&v| T::cast(v)).collect();
        let mut k = weights.len();
        for (i, layer) in self.spec.layers().iter().enumerate().rev() {
            let input = &cache[i];
            let output = &cache[i + 1];
            match *layer {
                Layer::Act(Activation::Relu) => {
                    for (d, y) in delta.iter_mut().zip(output) {
                        if *y <= T::zero() {
                            *d = T::zero();
                        }
                    }
                }
                Layer::Act(Activation::Tanh) => {
                    for (d, y) in delta.iter_mut().zip(output) {
                        *d = *d * (T::one() - *y * *y);
                    }
                }
                Layer::Affine { inputs, outputs } => {
                    k -= 1;
                    let (w, _) = &weights[k];
                    if let Some(g) = grads.as_deref_mut() {
                        let mut dw = vec![T::zero(); outputs * inputs];
                        let mut db = vec![T::zero(); outputs];
                        for r in 0..batch {
                            let xr = &input[r * inputs..(r + 1) * inputs];
                            let dr = &delta[r * outputs..(r + 1) * outputs];
                            for (j, &dj) in dr.iter().enumerate() {
                                db[j] += dj;
                                let row = &mut dw[j * inputs..(j + 1) * inputs];
                                for (acc, &xv) in row.iter_mut().zip(xr) {
                                    *acc += dj * xv;
                                }
                            }
                        }
                        let (wn, bn) = NetSpec::affine_names(k);
                        write_widened(g.get_mut(&wn).expect("layout"), &dw);
                        write_widened(g.get_mut(&bn).expect("layout"), &db);
                    }
                    let mut dx = vec![T::zero(); batch * inputs];
                    for r in 0..batch {
                        let dr = &delta[r * outputs..(r + 1) * outputs];
                        let out = &mut dx[r * inputs..(r + 1) * inputs];
                        for (j, &dj) in dr.iter().enumerate() {
                            if dj == T::zero() {
                                continue;
                            }
                            let wj = &w[j * inputs..(j + 1) * inputs];
                            for (acc, &wv) in out.iter_mut().zip(wj) {
                                *acc += dj * wv;
                            }
                        }
                    }
                    delta = dx;
                }
            }
        }
        delta.iter().map(|v| v.widen()).collect()
    }
}

fn write_widened<T: Real>(dst: &mut Tensor, src: &[T]) {
    for (d, s) in dst.data_mut().iter_mut().zip(src) {
        *d = s.widen();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn identity_net() -> Mlp {
        let spec = NetSpec::new(vec![Layer::Affine { inputs: 2, outputs: 2 }]).unwrap();
        let mut p = ParamStore::new();
        p.insert("fc0.weight", Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        p.insert("fc0.bias", Tensor::zeros(vec![2])).unwrap();
        Mlp::from_parts(spec, p).unwrap()
    }

    fn linear_net(w: &[f64]) -> Mlp {
        let spec = NetSpec::new(vec![Layer::Affine { inputs: w.len(), outputs: 1 }]).unwrap();
        let mut p = ParamStore::new();
        p.insert("fc0.weight", Tensor::matrix(1, w.len(), w.to_vec()).unwrap())
            .unwrap();
        p.insert("fc0.bias", Tensor::zeros(vec![1])).unwrap();
        Mlp::from_parts(spec, p).unwrap()
    }

    /// Straightforward re-implementation used as a forward oracle: nested
    /// loops over named parameters, no shared code with `Mlp::run`.
    fn oracle_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let mut k = 0;
        for layer in net.spec().layers() {
            h = match layer {
                Layer::Affine { inputs, outputs } => {
                    let w = net.params().get(&format!("fc{k}.weight")).unwrap().data();
                    let b = net.params().get(&format!("fc{k}.bias")).unwrap().data();
                    k += 1;
                    (0..*outputs)
                        .map(|j| b[j] + (0..*inputs).map(|i| w[j * inputs + i] * h[i]).sum::<f64>())
                        .collect()
                }
                Layer::Act(Activation::Relu) => h.iter().map(|v| v.max(0.0)).collect(),
                Layer::Act(Activation::Tanh) => h.iter().map(|v| v.tanh()).collect(),
            };
        }
        h
    }

    #[test]
    fn identity_affine_passes_input_through() {
        let net = identity_net();
        let y = net.eval(&Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let spec = NetSpec::mlp(3, &[5], 2, Activation::Relu, None).unwrap();
        let net = Mlp::zeros(spec);
        let y = net.eval(&Tensor::vector(vec![0.3, -7.0, 2.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn random_net_matches_oracle_forward() {
        let spec = NetSpec::mlp(2, &[16], 1, Activation::Relu, None).unwrap();
        let net = Mlp::init(spec, &mut rng::stream(3, &[0]));
        let x = [0.5, -0.5];
        let y = net.eval(&Tensor::vector(x.to_vec()).unwrap()).unwrap();
        let expected = oracle_forward(&net, &x);
        assert_eq!(y.data().len(), 1);
        assert!((y.data()[0] - expected[0]).abs() < 1e-14);
    }

    #[test]
    fn batch_rows_match_single_evaluation() {
        let spec = NetSpec::mlp(3, &[8, 8], 2, Activation::Relu, Some(Activation::Tanh)).unwrap();
        let net = Mlp::init(spec, &mut rng::stream(5, &[0]));
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -1.0, 0.5, 2.0]).unwrap();
        let y = net.eval(&x).unwrap();
        for r in 0..2 {
            let single = net.eval(&Tensor::vector(x.row(r).to_vec()).unwrap()).unwrap();
            assert_eq!(single.data(), y.row(r));
        }
    }

    #[test]
    fn linear_net_gradients() {
        let net = linear_net(&[2.0, -1.0]);
        let (_, tr) = net.forward(&Tensor::vector(vec![3.0, 4.0]).unwrap()).unwrap();
        let up = Tensor::vector(vec![1.0]).unwrap();
        let (g, dx) = net.backward(&tr, &up).unwrap();
        assert_eq!(dx.data(), &[2.0, -1.0]);
        assert_eq!(g.get("fc0.weight").unwrap().data(), &[3.0, 4.0]);
        assert_eq!(g.get("fc0.bias").unwrap().data(), &[1.0]);

        let net = linear_net(&[0.7]);
        let (_, tr) = net.forward(&Tensor::vector(vec![3.0]).unwrap()).unwrap();
        let g = net.grad_params(&tr, &up).unwrap();
        assert_eq!(g.get("fc0.weight").unwrap().data(), &[3.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = NetSpec::mlp(2, &[8], 1, Activation::Relu, None).unwrap();
        let net = Mlp::init(spec, &mut rng::stream(9, &[0]));
        let (_, tr) = net.forward(&Tensor::vector(vec![0.4, 0.1]).unwrap()).unwrap();
        let (g, dx) = net.backward(&tr, &Tensor::vector(vec![0.0]).unwrap()).unwrap();
        assert_eq!(g.norm(), 0.0);
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inactive_relu_region_has_zero_input_gradient() {
        // hidden pre-activations are -x0 - x1 - 1 < 0 for positive inputs
        let spec = NetSpec::mlp(2, &[2], 1, Activation::Relu, None).unwrap();
        let mut net = Mlp::zeros(spec);
        let p = net.params_mut();
        p.get_mut("fc0.weight").unwrap().data_mut().copy_from_slice(&[-1.0, -1.0, -1.0, -1.0]);
        p.get_mut("fc0.bias").unwrap().data_mut().copy_from_slice(&[-1.0, -1.0]);
        p.get_mut("fc1.weight").unwrap().data_mut().copy_from_slice(&[1.0, 1.0]);
        let (_, tr) = net.forward(&Tensor::vector(vec![0.5, 2.0]).unwrap()).unwrap();
        let dx = net.grad_input(&tr, &Tensor::vector(vec![1.0]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0]);
    }

    #[test]
    fn stale_trace_is_rejected() {
        let mut net = linear_net(&[1.0]);
        let (_, tr) = net.forward(&Tensor::vector(vec![1.0]).unwrap()).unwrap();
        net.params_mut();
        let up = Tensor::vector(vec![1.0]).unwrap();
        assert!(matches!(net.grad_input(&tr, &up), Err(Error::StaleTrace)));

        let other = linear_net(&[1.0]);
        let (_, tr) = other.forward(&Tensor::vector(vec![1.0]).unwrap()).unwrap();
        assert!(matches!(net.grad_params(&tr, &up), Err(Error::StaleTrace)));
    }

    #[test]
    fn shape_and_finiteness_checked() {
        let net = linear_net(&[1.0, 1.0]);
        assert!(matches!(
            net.eval(&Tensor::vector(vec![1.0]).unwrap()),
            Err(Error::Shape { .. })
        ));
        let bad = Tensor::from_parts_unchecked(vec![2], vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(net.eval(&bad), Err(Error::NonFinite(_))));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let spec = NetSpec::mlp(2, &[32, 32], 3, Activation::Relu, Some(Activation::Tanh)).unwrap();
        let net = Mlp::init(spec, &mut rng::stream(1, &[2]));
        let x = Tensor::matrix(2, 2, vec![0.3, -0.2, 1.5, 0.7]).unwrap();
        let a = net.eval(&x).unwrap();
        let b = net.eval(&x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn f32_mode_tracks_f64() {
        let spec = NetSpec::mlp(2, &[16, 16], 1, Activation::Relu, None).unwrap();
        let net = Mlp::init(spec, &mut rng::stream(4, &[0]));
        let net32 = net.clone().with_precision(Precision::F32);
        let x = Tensor::matrix(2, 2, vec![0.3, -0.2, 0.9, 0.1]).unwrap();
        let (y64, t64) = net.forward(&x).unwrap();
        let (y32, t32) = net32.forward(&x).unwrap();
        assert!(y64.max_abs_diff(&y32) < 1e-5);
        let up = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        let d64 = net.grad_input(&t64, &up).unwrap();
        let d32 = net32.grad_input(&t32, &up).unwrap();
        assert!(d64.max_abs_diff(&d32) < 1e-5);
    }
}
