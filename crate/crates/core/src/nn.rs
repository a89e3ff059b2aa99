//! Named parameter storage and the small set of layers the model is built from.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Flat, ordered, name-addressed set of parameter tensors.
///
/// Names are slash-separated module paths such as
/// `perception/head/cls_out/weight`; they double as checkpoint keys.
#[derive(Clone)]
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    vars: Vec<Var<T>>,
    index: HashMap<String, usize>,
    trainable: bool,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            vars: Vec::new(),
            index: HashMap::new(),
            trainable: true,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.vars.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.vars.push(self.leaf(value));
        ParamId(id)
    }

    fn leaf(&self, value: Tensor<T>) -> Var<T> {
        if self.trainable {
            Var::param(value)
        } else {
            Var::constant(value)
        }
    }

    pub fn var(&self, id: ParamId) -> &Var<T> {
        &self.vars[id.0]
    }

    pub fn get(&self, name: &str) -> Option<&Var<T>> {
        self.index.get(name).map(|&i| &self.vars[i])
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        assert_eq!(value.shape(), self.vars[id.0].shape(), "parameter shape change");
        self.vars[id.0] = self.leaf(value);
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Var<T>)> {
        self.names
            .iter()
            .zip(&self.vars)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.iter().map(|v| v.value().len()).sum()
    }

    /// Copy whose leaves are constants: running the model on it builds no
    /// autodiff graph.
    pub fn frozen(&self) -> Self {
        self.with_trainable(false)
    }

    pub fn trainable(&self) -> Self {
        self.with_trainable(true)
    }

    fn with_trainable(&self, trainable: bool) -> Self {
        let mut out = Self {
            names: self.names.clone(),
            vars: Vec::with_capacity(self.vars.len()),
            index: self.index.clone(),
            trainable,
        };
        for v in &self.vars {
            out.vars.push(out.leaf(v.value().clone()));
        }
        out
    }
}

/// Parameter initialisation schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform with variance `gain^2 / fan_in`.
    Fan { gain: f64 },
    Zeros,
    Constant(f64),
}

pub fn init_tensor<T: Scalar>(shape: &[usize], fan_in: usize, init: Init, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Constant(c) => Tensor::full(shape, T::lit(c)),
        Init::Fan { gain } => {
            let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
            Tensor::new(shape, (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect())
        }
    }
}

/// Gain appropriate for SiLU-activated layers.
pub const SILU_GAIN: f64 = 1.6;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub bias: bool,
    pub init: Init,
    pub bias_init: Init,
}

impl ConvSpec {
    pub fn new(cin: usize, cout: usize, kernel: usize) -> Self {
        Self {
            cin,
            cout,
            kernel,
            stride: 1,
            bias: true,
            init: Init::Fan { gain: SILU_GAIN },
            bias_init: Init::Zeros,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn bias_init(mut self, init: Init) -> Self {
        self.bias_init = init;
        self
    }
}

impl Conv2d {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, spec: ConvSpec, rng: &mut ChaCha8Rng) -> Self {
        let k = spec.kernel;
        let fan_in = spec.cin * k * k;
        let weight = ps.add(
            format!("{name}/weight"),
            init_tensor(&[spec.cout, spec.cin, k, k], fan_in, spec.init, rng),
        );
        let bias = spec
            .bias
            .then(|| ps.add(format!("{name}/bias"), init_tensor(&[spec.cout], fan_in, spec.bias_init, rng)));
        Self {
            weight,
            bias,
            stride: spec.stride,
            pad: k / 2,
        }
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Var<T>) -> Var<T> {
        x.conv2d(ps.var(self.weight), self.bias.map(|b| ps.var(b)), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(
        ps: &mut ParamStore<T>,
        name: &str,
        din: usize,
        dout: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = ps.add(format!("{name}/weight"), init_tensor(&[dout, din], din, init, rng));
        let bias = ps.add(format!("{name}/bias"), Tensor::zeros(&[dout]));
        Self { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Var<T>) -> Var<T> {
        x.linear(ps.var(self.weight), Some(ps.var(self.bias)))
    }
}

/// Two affine layers with a SiLU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new<T: Scalar>(
        ps: &mut ParamStore<T>,
        name: &str,
        dims: (usize, usize, usize),
        out_init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (din, dh, dout) = dims;
        Self {
            hidden: Linear::new(ps, &format!("{name}/fc1"), din, dh, Init::Fan { gain: SILU_GAIN }, rng),
            out: Linear::new(ps, &format!("{name}/fc2"), dh, dout, out_init, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Var<T>) -> Var<T> {
        self.out.forward(ps, &self.hidden.forward(ps, x).silu())
    }
}
