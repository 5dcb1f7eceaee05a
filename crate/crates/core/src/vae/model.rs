use std::f64::consts::PI;

use super::params::{ParamVars, VaeParams};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Diagonal Gaussian `q(z|x) = N(mu, exp(log_var))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

/// Single-sample ELBO estimate `value = -kl + rec`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Elbo {
    pub value: f64,
    pub kl: f64,
    pub rec: f64,
}

/// Nodes of a batched ELBO graph. `*_rows` hold one entry per image; the
/// scalar nodes are batch totals.
#[derive(Clone, Copy, Debug)]
pub struct ElboNodes {
    pub mu: Var,
    pub log_var: Var,
    pub z: Var,
    pub x_hat: Var,
    pub kl_rows: Var,
    pub rec_rows: Var,
    pub kl: Var,
    pub rec: Var,
    pub elbo: Var,
}

fn linear(g: &mut Graph, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

pub(crate) fn encode_graph(g: &mut Graph, x: Var, p: &ParamVars) -> Result<(Var, Var)> {
    let h = linear(g, x, p.enc_hidden)?;
    let h = g.relu(h)?;
    let mu = linear(g, h, p.enc_mu)?;
    let log_var = linear(g, h, p.enc_logvar)?;
    Ok((mu, log_var))
}

pub(crate) fn reparameterize(g: &mut Graph, mu: Var, log_var: Var, eps: Var) -> Result<Var> {
    let half = g.scale(log_var, 0.5)?;
    let sd = g.exp(half)?;
    let noise = g.mul(sd, eps)?;
    g.add(mu, noise)
}

pub(crate) fn decode_graph(g: &mut Graph, z: Var, p: &ParamVars) -> Result<Var> {
    let h = linear(g, z, p.dec_hidden)?;
    let h = g.relu(h)?;
    linear(g, h, p.dec_out)
}

/// `0.5 * sum_j (mu_j^2 + exp(lv_j) - lv_j - 1)` per row.
pub(crate) fn kl_rows_graph(g: &mut Graph, mu: Var, log_var: Var) -> Result<Var> {
    let mu2 = g.square(mu)?;
    let var = g.exp(log_var)?;
    let t = g.add(mu2, var)?;
    let t = g.sub(t, log_var)?;
    let t = g.offset(t, -1.0)?;
    let rows = g.sum_rows(t)?;
    g.scale(rows, 0.5)
}

/// `-0.5 * sum_i ((x_i - x_hat_i)^2 / c + ln(2 pi c))` per row.
pub(crate) fn rec_rows_graph(g: &mut Graph, x: Var, x_hat: Var, c: f64) -> Result<Var> {
    check_variance(c)?;
    let dim = g.shape(x).last().copied().unwrap_or(0) as f64;
    let r = g.sub(x, x_hat)?;
    let r2 = g.square(r)?;
    let rows = g.sum_rows(r2)?;
    let scaled = g.scale(rows, -0.5 / c)?;
    g.offset(scaled, -0.5 * dim * (2.0 * PI * c).ln())
}

fn check_variance(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "decoder variance c must be positive, got {c}"
        )))
    }
}

/// Builds the batched ELBO for images `x` (`[batch, input_dim]`).
///
/// With `eps` (`[batch, latent_dim]`) the latent is the reparameterized
/// sample `mu + exp(log_var / 2) * eps`; without it the posterior mean is
/// decoded directly, which equals the `eps = 0` sample in value and in
/// gradient.
pub fn build_elbo(
    g: &mut Graph,
    x: Var,
    params: &ParamVars,
    eps: Option<Var>,
    c: f64,
) -> Result<ElboNodes> {
    let (mu, log_var) = encode_graph(g, x, params)?;
    let z = match eps {
        Some(eps) => reparameterize(g, mu, log_var, eps)?,
        None => mu,
    };
    let x_hat = decode_graph(g, z, params)?;
    let kl_rows = kl_rows_graph(g, mu, log_var)?;
    let rec_rows = rec_rows_graph(g, x, x_hat, c)?;
    let kl = g.sum(kl_rows)?;
    let rec = g.sum(rec_rows)?;
    let elbo = g.sub(rec, kl)?;
    Ok(ElboNodes {
        mu,
        log_var,
        z,
        x_hat,
        kl_rows,
        rec_rows,
        kl,
        rec,
        elbo,
    })
}

fn as_row(t: &Tensor, len: usize, op: &'static str) -> Result<Tensor> {
    if t.len() != len || t.shape().len() > 2 || (t.shape().len() == 2 && t.shape()[0] != 1) {
        return Err(Error::ShapeMismatch {
            op,
            left: t.shape().to_vec(),
            right: vec![len],
        });
    }
    t.clone().reshape(vec![1, len])
}

/// Posterior of a single image.
pub fn encode(x: &Tensor, params: &VaeParams) -> Result<Posterior> {
    let mut g = Graph::new();
    let xv = g.constant(as_row(x, params.input_dim(), "encode")?);
    let p = params.attach(&mut g, false);
    let (mu, log_var) = encode_graph(&mut g, xv, &p)?;
    Ok(Posterior {
        mu: g.value(mu).data().to_vec(),
        log_var: g.value(log_var).data().to_vec(),
    })
}

/// `z = mu + exp(log_var / 2) * eps`.
pub fn sample_latent(post: &Posterior, eps: &Tensor) -> Result<Tensor> {
    let l = post.mu.len();
    let mut g = Graph::new();
    let mu = g.constant(Tensor::vector(post.mu.clone()));
    let lv = g.constant(Tensor::vector(post.log_var.clone()));
    let e = g.constant(as_row(eps, l, "sample_latent")?.reshape(vec![l])?);
    let z = reparameterize(&mut g, mu, lv, e)?;
    Ok(g.value(z).clone())
}

/// Decoder mean `g(z)` of a single latent vector.
pub fn decode(z: &Tensor, params: &VaeParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let zv = g.constant(as_row(z, params.latent_dim(), "decode")?);
    let p = params.attach(&mut g, false);
    let out = decode_graph(&mut g, zv, &p)?;
    g.value(out).clone().reshape(vec![params.input_dim()])
}

/// Closed-form `KL(q || N(0, I))` of a diagonal Gaussian.
pub fn kl_term(post: &Posterior) -> Result<f64> {
    let l = post.mu.len();
    let mut g = Graph::new();
    let mu = g.constant(Tensor::matrix(1, l, post.mu.clone())?);
    let lv = g.constant(Tensor::matrix(1, l, post.log_var.clone())?);
    let kl = kl_rows_graph(&mut g, mu, lv)?;
    Ok(g.value(kl).data()[0])
}

/// Log-density of `x` under `N(x_hat, c I)`.
pub fn rec_term(x: &Tensor, x_hat: &Tensor, c: f64) -> Result<f64> {
    check_variance(c)?;
    let d = x.len();
    let mut g = Graph::new();
    let xv = g.constant(as_row(x, d, "rec_term")?);
    let xh = g.constant(as_row(x_hat, d, "rec_term")?);
    let rec = rec_rows_graph(&mut g, xv, xh, c)?;
    Ok(g.value(rec).data()[0])
}

/// ELBO of a single image. `eps = None` decodes the posterior mean.
pub fn elbo(x: &Tensor, params: &VaeParams, eps: Option<&Tensor>, c: f64) -> Result<Elbo> {
    let mut g = Graph::new();
    let xv = g.constant(as_row(x, params.input_dim(), "elbo")?);
    let p = params.attach(&mut g, false);
    let e = match eps {
        Some(e) => Some(g.constant(as_row(e, params.latent_dim(), "elbo")?)),
        None => None,
    };
    let n = build_elbo(&mut g, xv, &p, e, c)?;
    let item = |v| g.value(v).data()[0];
    Ok(Elbo {
        value: item(n.elbo),
        kl: item(n.kl),
        rec: item(n.rec),
    })
}
