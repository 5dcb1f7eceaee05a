use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct VaeConfig {
    /// Pixels per image.
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    /// Variance of the decoder likelihood `N(x; g(z), c I)`.
    pub c: f64,
    pub seed: u64,
}

impl VaeConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 400,
            latent_dim: 20,
            c: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "layer sizes must be positive (input {}, hidden {}, latent {})",
                self.input_dim, self.hidden_dim, self.latent_dim
            )));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "decoder variance c must be positive and finite, got {}",
                self.c
            )));
        }
        Ok(())
    }
}

/// Affine layer `y = x W + b` with `W` stored `[fan_in, fan_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![fan_in, fan_out]),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams {
    pub enc_hidden: Linear,
    pub enc_mu: Linear,
    pub enc_logvar: Linear,
    pub dec_hidden: Linear,
    pub dec_out: Linear,
}

pub const PARAM_NAMES: [&str; 10] = [
    "enc_hidden.weight",
    "enc_hidden.bias",
    "enc_mu.weight",
    "enc_mu.bias",
    "enc_logvar.weight",
    "enc_logvar.bias",
    "dec_hidden.weight",
    "dec_hidden.bias",
    "dec_out.weight",
    "dec_out.bias",
];

impl VaeParams {
    pub fn zeros(config: &VaeConfig) -> Self {
        let (d, h, l) = (config.input_dim, config.hidden_dim, config.latent_dim);
        Self {
            enc_hidden: Linear::zeros(d, h),
            enc_mu: Linear::zeros(h, l),
            enc_logvar: Linear::zeros(h, l),
            dec_hidden: Linear::zeros(l, h),
            dec_out: Linear::zeros(h, d),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.enc_hidden.fan_in()
    }

    pub fn hidden_dim(&self) -> usize {
        self.enc_hidden.fan_out()
    }

    pub fn latent_dim(&self) -> usize {
        self.enc_mu.fan_out()
    }

    fn layers(&self) -> [&Linear; 5] {
        [
            &self.enc_hidden,
            &self.enc_mu,
            &self.enc_logvar,
            &self.dec_hidden,
            &self.dec_out,
        ]
    }

    /// All parameter tensors in a fixed order, paired with [`PARAM_NAMES`].
    pub fn tensors(&self) -> [&Tensor; 10] {
        let [a, b, c, d, e] = self.layers();
        [
            &a.weight, &a.bias, &b.weight, &b.bias, &c.weight, &c.bias, &d.weight, &d.bias,
            &e.weight, &e.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 10] {
        let Self {
            enc_hidden: a,
            enc_mu: b,
            enc_logvar: c,
            dec_hidden: d,
            dec_out: e,
        } = self;
        [
            &mut a.weight,
            &mut a.bias,
            &mut b.weight,
            &mut b.bias,
            &mut c.weight,
            &mut c.bias,
            &mut d.weight,
            &mut d.bias,
            &mut e.weight,
            &mut e.bias,
        ]
    }

    /// Rebuilds parameters from tensors in [`VaeParams::tensors`] order,
    /// checking that the shapes describe a consistent network.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        let [ehw, ehb, emw, emb, elw, elb, dhw, dhb, dow, dob]: [Tensor; 10] =
            tensors.try_into().map_err(|v: Vec<Tensor>| {
                Error::InvalidConfig(format!("expected 10 parameter tensors, got {}", v.len()))
            })?;
        let bad = |what: &str| Error::InvalidConfig(format!("inconsistent parameter shapes: {what}"));
        let (d, h) = ehw.dims2().ok_or_else(|| bad("enc_hidden.weight"))?;
        let l = emw.dims2().ok_or_else(|| bad("enc_mu.weight"))?.1;
        let config = VaeConfig {
            input_dim: d,
            hidden_dim: h,
            latent_dim: l,
            c: 1.0,
            seed: 0,
        };
        let params = Self {
            enc_hidden: Linear { weight: ehw, bias: ehb },
            enc_mu: Linear { weight: emw, bias: emb },
            enc_logvar: Linear { weight: elw, bias: elb },
            dec_hidden: Linear { weight: dhw, bias: dhb },
            dec_out: Linear { weight: dow, bias: dob },
        };
        let reference = Self::zeros(&config);
        for (i, (t, r)) in params.tensors().iter().zip(reference.tensors()).enumerate() {
            if t.shape() != r.shape() {
                return Err(bad(PARAM_NAMES[i]));
            }
        }
        Ok(params)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Puts every parameter on `graph`, as differentiable variables or as
    /// constants.
    pub fn attach(&self, graph: &mut Graph, differentiable: bool) -> ParamVars {
        let mut leaf = |t: &Tensor| {
            if differentiable {
                graph.variable(t.clone())
            } else {
                graph.constant(t.clone())
            }
        };
        let mut layer = |l: &Linear| (leaf(&l.weight), leaf(&l.bias));
        ParamVars {
            enc_hidden: layer(&self.enc_hidden),
            enc_mu: layer(&self.enc_mu),
            enc_logvar: layer(&self.enc_logvar),
            dec_hidden: layer(&self.dec_hidden),
            dec_out: layer(&self.dec_out),
        }
    }
}

/// Graph handles of an attached [`VaeParams`], as `(weight, bias)` pairs.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub enc_hidden: (Var, Var),
    pub enc_mu: (Var, Var),
    pub enc_logvar: (Var, Var),
    pub dec_hidden: (Var, Var),
    pub dec_out: (Var, Var),
}

impl ParamVars {
    pub fn vars(&self) -> [Var; 10] {
        let l = [
            self.enc_hidden,
            self.enc_mu,
            self.enc_logvar,
            self.dec_hidden,
            self.dec_out,
        ];
        [
            l[0].0, l[0].1, l[1].0, l[1].1, l[2].0, l[2].1, l[3].0, l[3].1, l[4].0, l[4].1,
        ]
    }
}

/// Weights uniform in `±sqrt(1 / fan_in)`, biases zero, drawn from a
/// ChaCha8 stream seeded by `config.seed`.
pub fn init_params(config: &VaeConfig) -> Result<VaeParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = VaeParams::zeros(config);
    for t in params.tensors_mut().into_iter().step_by(2) {
        let bound = (1.0 / t.shape()[0] as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        t.data_mut().iter_mut().for_each(|w| *w = dist.sample(&mut rng));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(seed: u64) -> VaeConfig {
        VaeConfig {
            input_dim: 16,
            hidden_dim: 400,
            latent_dim: 4,
            c: 1.0,
            seed,
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        assert_eq!(init_params(&config(7)).unwrap(), init_params(&config(7)).unwrap());
    }

    #[test]
    fn weights_respect_fan_in_bound() {
        let p = init_params(&config(1)).unwrap();
        assert!(p.dec_out.weight.data().iter().all(|w| w.abs() <= 0.05));
        assert!(p.dec_out.weight.data().iter().any(|w| w.abs() > 0.04));
        assert!(p.dec_out.bias.data().iter().all(|&b| b == 0.0));
        let bound = 0.25;
        assert!(p.enc_hidden.weight.data().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn different_seeds_differ_almost_everywhere() {
        let a = init_params(&config(1)).unwrap();
        let b = init_params(&config(2)).unwrap();
        let (mut same, mut total) = (0usize, 0usize);
        for (x, y) in a.tensors().iter().zip(b.tensors()).step_by(2) {
            total += x.len();
            same += x.data().iter().zip(y.data()).filter(|(p, q)| p == q).count();
        }
        assert!(same as f64 <= 0.01 * total as f64, "{same} of {total} equal");
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = config(0);
        c.c = 0.0;
        assert!(init_params(&c).is_err());
        c.c = -1.0;
        assert!(c.validate().is_err());
        let mut c = config(0);
        c.latent_dim = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn from_tensors_round_trip_and_shape_check() {
        let p = init_params(&config(3)).unwrap();
        let tensors: Vec<Tensor> = p.tensors().iter().map(|t| (*t).clone()).collect();
        assert_eq!(VaeParams::from_tensors(tensors.clone()).unwrap(), p);
        let mut broken = tensors;
        broken[3] = Tensor::zeros(vec![5]);
        assert!(VaeParams::from_tensors(broken).is_err());
    }
}
