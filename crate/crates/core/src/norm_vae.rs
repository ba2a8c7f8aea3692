//! Domain-conditioned autoencoder whose latent mean and spread vectors are
//! projected onto the unit sphere instead of being pulled towards `N(0, I)`.
//!
//! The encoder sees `[x | onehot(domain)]` and emits a raw `μ` head and a raw
//! `σ` head. `μ = r_μ / ‖r_μ‖` and `σ = |r_σ| / ‖r_σ‖`, then
//! `z = μ + σ ⊙ ε` with `ε ~ N(0, I)`. The decoder sees `[z | onehot(domain)]`.
//!
//! Training uses same-class (source, target) pairs. Each source code is
//! decoded under both domains, as is each target code, and the loss is the sum
//! of the four reconstruction errors: `x^s` vs `x̂^s`, `x^t` vs `x̂^t`, `x^s`
//! vs `x̂^{ts}` and `x^t` vs `x̂^{st}`. There is no KL term.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataio::{Domain, LabelledSample, Origin};
use crate::error::{Error, Result};
use crate::tensor::{mse_loss, Adam, AdamConfig, DenseNet, Matrix, NetGradients, RngStream};

const CHECKPOINT_KIND: &str = "norm-vae";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            latent_dim: 64,
            hidden_dim: 512,
            dropout: 0.5,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.latent_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("VAE epochs, batch, latent and hidden sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormVaeParams {
    encoder: DenseNet,
    decoder: DenseNet,
    feature_dim: usize,
    latent_dim: usize,
    trained: bool,
}

/// Per-row latent statistics, both unit-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    pub mu: Matrix,
    pub sigma: Matrix,
}

/// One sample's latent statistics and a draw from them.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub z: Vec<f64>,
}

/// A labelled source feature and a same-class pseudo-labelled target feature.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossDomainPair {
    pub source_id: u64,
    pub target_id: u64,
    pub source_class: usize,
    pub target_class: usize,
    pub x_s: Vec<f64>,
    pub x_t: Vec<f64>,
}

impl CrossDomainPair {
    pub fn new(source: &LabelledSample, target: &LabelledSample) -> Result<Self> {
        let pair = CrossDomainPair {
            source_id: source.id,
            target_id: target.id,
            source_class: source.label,
            target_class: target.label,
            x_s: source.features.clone(),
            x_t: target.features.clone(),
        };
        pair.check()?;
        Ok(pair)
    }

    fn check(&self) -> Result<()> {
        if self.source_class != self.target_class {
            return Err(Error::Usage(format!(
                "pair ({}, {}) mixes classes {} and {}",
                self.source_id, self.target_id, self.source_class, self.target_class
            )));
        }
        Ok(())
    }

    pub fn class(&self) -> usize {
        self.source_class
    }
}

/// The four reconstruction terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormVaeLoss {
    /// `x^s` vs `x̂^s`
    pub recon_source: f64,
    /// `x^t` vs `x̂^t`
    pub recon_target: f64,
    /// `x^s` vs `x̂^{ts}`
    pub cross_source: f64,
    /// `x^t` vs `x̂^{st}`
    pub cross_target: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormVaeGradients {
    pub encoder: NetGradients,
    pub decoder: NetGradients,
}

impl NormVaeGradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.encoder.slices();
        s.extend(self.decoder.slices());
        s
    }
}

/// Result of [`train_norm_vae`]. Training is skipped when no source sample
/// shares a class with the selected target set.
#[derive(Debug, Clone)]
pub enum VaeFit {
    Trained { params: NormVaeParams, epoch_losses: Vec<f64> },
    Skipped,
}

impl NormVaeParams {
    /// Fresh Glorot-initialised encoder `d+2 -> hidden -> 2 d_z` and decoder
    /// `d_z+2 -> hidden -> d`.
    pub fn init(feature_dim: usize, config: &VaeConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let (h, dz) = (config.hidden_dim, config.latent_dim);
        let encoder = DenseNet::mlp(&[feature_dim + 2, h, 2 * dz], config.dropout, &mut rng.derive("encoder"))?;
        let decoder = DenseNet::mlp(&[dz + 2, h, feature_dim], config.dropout, &mut rng.derive("decoder"))?;
        NormVaeParams::from_nets(encoder, decoder, false)
    }

    pub fn from_nets(encoder: DenseNet, decoder: DenseNet, trained: bool) -> Result<Self> {
        let out = encoder.output_dim();
        if out == 0 || out % 2 != 0 {
            return Err(Error::Shape(format!("encoder output {out} is not two equal heads")));
        }
        let latent_dim = out / 2;
        if encoder.input_dim() < 3 {
            return Err(Error::Shape("encoder input must hold features plus the domain code".into()));
        }
        let feature_dim = encoder.input_dim() - 2;
        if decoder.input_dim() != latent_dim + 2 || decoder.output_dim() != feature_dim {
            return Err(Error::Shape(format!(
                "decoder {} -> {} does not match latent {latent_dim} and features {feature_dim}",
                decoder.input_dim(),
                decoder.output_dim()
            )));
        }
        Ok(NormVaeParams {
            encoder,
            decoder,
            feature_dim,
            latent_dim,
            trained,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn encoder(&self) -> &DenseNet {
        &self.encoder
    }

    pub fn decoder(&self) -> &DenseNet {
        &self.decoder
    }

    pub fn encoder_mut(&mut self) -> &mut DenseNet {
        &mut self.encoder
    }

    pub fn decoder_mut(&mut self) -> &mut DenseNet {
        &mut self.decoder
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    fn param_sizes(&self) -> Vec<usize> {
        self.encoder
            .layers()
            .iter()
            .chain(self.decoder.layers())
            .flat_map(|l| [l.weight.data().len(), l.bias.len()])
            .collect()
    }

    /// Encoder then decoder parameters, in the order of
    /// [`NormVaeGradients::slices`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.encoder.param_slices_mut();
        s.extend(self.decoder.param_slices_mut());
        s
    }

    pub fn to_json(&self) -> Result<String> {
        checkpoint::to_json(CHECKPOINT_KIND, self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: NormVaeParams = checkpoint::from_json(CHECKPOINT_KIND, text)?;
        NormVaeParams::from_nets(p.encoder, p.decoder, p.trained)
    }
}

/// `[x | onehot(domain_of(row))]`
fn condition(x: &Matrix, domain_of: impl Fn(usize) -> Domain) -> Result<Matrix> {
    let codes: Vec<f64> = (0..x.rows()).flat_map(|i| domain_of(i).one_hot()).collect();
    x.hcat(&Matrix::from_vec(x.rows(), 2, codes)?)
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Unit-sphere projection of one sample's raw heads:
/// `μ = r_μ / ‖r_μ‖`, `σ = |r_σ| / ‖r_σ‖`.
pub fn normalize_heads(raw_mu: &[f64], raw_sigma: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let nm = l2_norm(raw_mu);
    if nm == 0.0 {
        return Err(Error::DegenerateEncoding { head: "mu" });
    }
    let ns = l2_norm(raw_sigma);
    if ns == 0.0 {
        return Err(Error::DegenerateEncoding { head: "sigma" });
    }
    Ok((
        raw_mu.iter().map(|v| v / nm).collect(),
        raw_sigma.iter().map(|v| v.abs() / ns).collect(),
    ))
}

fn split_heads(raw: &Matrix, dz: usize) -> Result<LatentStats> {
    let n = raw.rows();
    let mut mu = Matrix::zeros(n, dz);
    let mut sigma = Matrix::zeros(n, dz);
    for i in 0..n {
        let row = raw.row(i);
        let (m, s) = normalize_heads(&row[..dz], &row[dz..])?;
        mu.row_mut(i).copy_from_slice(&m);
        sigma.row_mut(i).copy_from_slice(&s);
    }
    Ok(LatentStats { mu, sigma })
}

/// Gradient w.r.t. the raw heads given gradients w.r.t. `μ` and `σ`.
///
/// For `u = v / ‖v‖`: `∂L/∂v = (g - u (u·g)) / ‖v‖`. The `σ` head adds the
/// sign of the raw value for the absolute value (zero at zero).
fn heads_backward(raw: &Matrix, stats: &LatentStats, g_mu: &Matrix, g_sigma: &Matrix) -> Matrix {
    let dz = stats.mu.cols();
    let mut g_raw = Matrix::zeros(raw.rows(), 2 * dz);
    for i in 0..raw.rows() {
        let r = raw.row(i);
        let (rm, rs) = r.split_at(dz);
        let (mu, sigma) = (stats.mu.row(i), stats.sigma.row(i));
        let (gm, gs) = (g_mu.row(i), g_sigma.row(i));
        let nm = l2_norm(rm);
        let ns = l2_norm(rs);
        let dot_m: f64 = mu.iter().zip(gm).map(|(a, b)| a * b).sum();
        let dot_s: f64 = sigma.iter().zip(gs).map(|(a, b)| a * b).sum();
        let out = g_raw.row_mut(i);
        for j in 0..dz {
            out[j] = (gm[j] - mu[j] * dot_m) / nm;
            let sign = if rs[j] > 0.0 {
                1.0
            } else if rs[j] < 0.0 {
                -1.0
            } else {
                0.0
            };
            out[dz + j] = sign * (gs[j] - sigma[j] * dot_s) / ns;
        }
    }
    g_raw
}

fn check_features(params: &NormVaeParams, x: &Matrix) -> Result<()> {
    if x.cols() != params.feature_dim {
        return Err(Error::Shape(format!(
            "norm-VAE expects {} features, got {}",
            params.feature_dim,
            x.cols()
        )));
    }
    Ok(())
}

/// Unit-norm latent statistics for every row of `x` (eval mode, no dropout).
pub fn encode(params: &NormVaeParams, x: &Matrix, domain: Domain) -> Result<LatentStats> {
    check_features(params, x)?;
    let input = condition(x, |_| domain)?;
    let mut unused = RngStream::new(0, "norm-vae/eval");
    let (raw, _) = params.encoder.forward(&input, false, &mut unused)?;
    split_heads(&raw, params.latent_dim)
}

/// `z = μ + σ ⊙ ε` with `ε` drawn row-major from `rng`.
pub fn reparameterize(mu: &Matrix, sigma: &Matrix, rng: &mut RngStream) -> Result<Matrix> {
    let eps = noise(mu.rows(), mu.cols(), rng);
    reparameterize_with(mu, sigma, &eps)
}

fn reparameterize_with(mu: &Matrix, sigma: &Matrix, eps: &Matrix) -> Result<Matrix> {
    mu.add(&sigma.hadamard(eps)?)
}

fn noise(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.standard_normal()).collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

/// Encodes one sample and draws its latent code.
pub fn sample_latent(params: &NormVaeParams, x: &[f64], domain: Domain, rng: &mut RngStream) -> Result<LatentCode> {
    let stats = encode(params, &Matrix::from_vec(1, x.len(), x.to_vec())?, domain)?;
    let z = reparameterize(&stats.mu, &stats.sigma, rng)?;
    Ok(LatentCode {
        mu: stats.mu.into_vec(),
        sigma: stats.sigma.into_vec(),
        z: z.into_vec(),
    })
}

/// Decodes every row of `z` under `domain` (eval mode).
pub fn decode(params: &NormVaeParams, z: &Matrix, domain: Domain) -> Result<Matrix> {
    if z.cols() != params.latent_dim {
        return Err(Error::Shape(format!(
            "decoder expects latent dim {}, got {}",
            params.latent_dim,
            z.cols()
        )));
    }
    let input = condition(z, |_| domain)?;
    let mut unused = RngStream::new(0, "norm-vae/eval");
    Ok(params.decoder.forward(&input, false, &mut unused)?.0)
}

fn pair_matrices(params: &NormVaeParams, batch: &[CrossDomainPair]) -> Result<(Matrix, Matrix)> {
    if batch.is_empty() {
        return Err(Error::Empty("pair batch"));
    }
    for p in batch {
        p.check()?;
    }
    let d = params.feature_dim;
    let xs = Matrix::from_rows(d, batch.iter().map(|p| p.x_s.as_slice()))?;
    let xt = Matrix::from_rows(d, batch.iter().map(|p| p.x_t.as_slice()))?;
    Ok((xs, xt))
}

/// Loss and gradients with the noise supplied explicitly: `eps_s` and
/// `eps_t` are `B x d_z`. Dropout masks come from `dropout_rng`; nets with a
/// zero dropout rate never draw from it.
pub fn norm_vae_loss_with_noise(
    params: &NormVaeParams,
    batch: &[CrossDomainPair],
    eps_s: &Matrix,
    eps_t: &Matrix,
    dropout_rng: &mut RngStream,
) -> Result<(NormVaeLoss, NormVaeGradients)> {
    let (xs, xt) = pair_matrices(params, batch)?;
    let b = xs.rows();
    let dz = params.latent_dim;
    if eps_s.shape() != (b, dz) || eps_t.shape() != (b, dz) {
        return Err(Error::Shape(format!("noise must be {b}x{dz}")));
    }

    // Source rows first, then target rows, through one encoder pass.
    let x_both = Matrix::vcat(&[&xs, &xt])?;
    let enc_in = condition(&x_both, |i| if i < b { Domain::Source } else { Domain::Target })?;
    let (raw, enc_tape) = params.encoder.forward(&enc_in, true, dropout_rng)?;
    let stats = split_heads(&raw, dz)?;
    let eps = Matrix::vcat(&[eps_s, eps_t])?;
    let z = reparameterize_with(&stats.mu, &stats.sigma, &eps)?;
    let (zs, zt) = (z.row_range(0, b), z.row_range(b, 2 * b));

    // Decoder blocks: x̂^s, x̂^{st}, x̂^t, x̂^{ts}.
    let z_blocks = Matrix::vcat(&[&zs, &zs, &zt, &zt])?;
    let block_domain = [Domain::Source, Domain::Target, Domain::Target, Domain::Source];
    let dec_in = condition(&z_blocks, |i| block_domain[i / b])?;
    let (out, dec_tape) = params.decoder.forward(&dec_in, true, dropout_rng)?;

    let targets = [&xs, &xt, &xt, &xs];
    let mut terms = [0.0; 4];
    let mut grads = Vec::with_capacity(4);
    for (blk, target) in targets.iter().enumerate() {
        let (loss, g) = mse_loss(&out.row_range(blk * b, (blk + 1) * b), target)?;
        terms[blk] = loss;
        grads.push(g);
    }
    let g_out = Matrix::vcat(&grads.iter().collect::<Vec<_>>())?;
    let (dec_grads, g_dec_in) = params.decoder.backward(&dec_tape, &g_out)?;

    let g_z_in = g_dec_in.columns(0, dz);
    let mut g_zs = g_z_in.row_range(0, b);
    g_zs.add_assign(&g_z_in.row_range(b, 2 * b))?;
    let mut g_zt = g_z_in.row_range(2 * b, 3 * b);
    g_zt.add_assign(&g_z_in.row_range(3 * b, 4 * b))?;
    let g_z = Matrix::vcat(&[&g_zs, &g_zt])?;
    let g_sigma = g_z.hadamard(&eps)?;
    let g_raw = heads_backward(&raw, &stats, &g_z, &g_sigma);
    let (enc_grads, _) = params.encoder.backward(&enc_tape, &g_raw)?;

    let [recon_source, cross_target, recon_target, cross_source] = terms;
    let loss = NormVaeLoss {
        recon_source,
        recon_target,
        cross_source,
        cross_target,
        total: recon_source + recon_target + cross_source + cross_target,
    };
    Ok((
        loss,
        NormVaeGradients {
            encoder: enc_grads,
            decoder: dec_grads,
        },
    ))
}

/// Training-mode loss and gradients on a pair batch. Noise and dropout masks
/// are drawn from `rng`, one `ε` per encoded sample shared by both of its
/// decodes.
pub fn norm_vae_loss(
    params: &NormVaeParams,
    batch: &[CrossDomainPair],
    rng: &mut RngStream,
) -> Result<(NormVaeLoss, NormVaeGradients)> {
    let b = batch.len();
    let eps_s = noise(b, params.latent_dim, rng);
    let eps_t = noise(b, params.latent_dim, rng);
    norm_vae_loss_with_noise(params, batch, &eps_s, &eps_t, rng)
}

/// Pairs every source sample whose class occurs in `selected_target` with a
/// uniformly drawn selected target sample of that class. Source samples of
/// other classes are skipped. Output follows the canonical source order.
pub fn pair_samples(
    source_set: &[LabelledSample],
    selected_target: &[LabelledSample],
    rng: &mut RngStream,
) -> Vec<CrossDomainPair> {
    let mut by_class: BTreeMap<usize, Vec<&LabelledSample>> = BTreeMap::new();
    for t in selected_target {
        by_class.entry(t.label).or_default().push(t);
    }
    for bucket in by_class.values_mut() {
        bucket.sort_by_key(|s| s.sort_key());
    }
    let mut sources: Vec<&LabelledSample> = source_set.iter().collect();
    sources.sort_by_key(|s| s.sort_key());
    sources
        .into_iter()
        .filter_map(|s| {
            let bucket = by_class.get(&s.label)?;
            let t = bucket[rng.below(bucket.len())];
            Some(CrossDomainPair {
                source_id: s.id,
                target_id: t.id,
                source_class: s.label,
                target_class: t.label,
                x_s: s.features.clone(),
                x_t: t.features.clone(),
            })
        })
        .collect()
}

/// Trains a fresh model on pairs re-drawn every epoch. Streams used under
/// `stream`: `init`, `pairing`, `shuffle`, `noise`.
pub fn train_norm_vae_with_stream(
    source_set: &[LabelledSample],
    selected_target: &[LabelledSample],
    config: &VaeConfig,
    stream: &RngStream,
) -> Result<VaeFit> {
    config.validate()?;
    let mut pairing = stream.derive("pairing");
    if pair_samples(source_set, selected_target, &mut pairing.clone()).is_empty() {
        return Ok(VaeFit::Skipped);
    }
    let dim = source_set[0].features.len();
    let mut params = NormVaeParams::init(dim, config, &mut stream.derive("init"))?;
    let mut adam = Adam::new(AdamConfig::with_learning_rate(config.learning_rate), &params.param_sizes());
    let mut shuffle = stream.derive("shuffle");
    let mut noise_rng = stream.derive("noise");

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut pairs = pair_samples(source_set, selected_target, &mut pairing);
        shuffle.shuffle(&mut pairs);
        let mut total = 0.0;
        for batch in pairs.chunks(config.batch_size) {
            let (loss, grads) = norm_vae_loss(&params, batch, &mut noise_rng)?;
            total += loss.total * batch.len() as f64;
            adam.step(params.param_slices_mut(), grads.slices())?;
        }
        epoch_losses.push(total / pairs.len() as f64);
    }
    params.mark_trained();
    Ok(VaeFit::Trained { params, epoch_losses })
}

/// [`train_norm_vae_with_stream`] on `(config.seed, "norm-vae")`.
pub fn train_norm_vae(
    source_set: &[LabelledSample],
    selected_target: &[LabelledSample],
    config: &VaeConfig,
) -> Result<VaeFit> {
    train_norm_vae_with_stream(source_set, selected_target, config, &RngStream::new(config.seed, "norm-vae"))
}

/// `decode(reparameterize(encode(x, from)), to)` in eval mode, tagged with
/// `to` and the seed sample's label.
pub fn generate_cross_domain(
    params: &NormVaeParams,
    sample: &LabelledSample,
    from: Domain,
    to: Domain,
    rng: &mut RngStream,
) -> Result<LabelledSample> {
    if !params.trained {
        return Err(Error::Usage("norm-VAE has not been trained".into()));
    }
    let code = sample_latent(params, &sample.features, from, rng)?;
    let z = Matrix::from_vec(1, params.latent_dim, code.z)?;
    let x = decode(params, &z, to)?;
    Ok(synthetic(sample, from, to, x.into_vec()))
}

fn synthetic(seed: &LabelledSample, from: Domain, to: Domain, features: Vec<f64>) -> LabelledSample {
    LabelledSample {
        id: seed.id,
        domain: to,
        origin: Origin::Synthetic { from },
        label: seed.label,
        features,
    }
}

/// Batched [`generate_cross_domain`]. Sample `i` draws its noise from
/// `stream/<id>`, so the output for a sample does not depend on which other
/// samples are in the batch.
pub fn generate_batch(
    params: &NormVaeParams,
    samples: &[LabelledSample],
    from: Domain,
    to: Domain,
    stream: &RngStream,
) -> Result<Vec<LabelledSample>> {
    if !params.trained {
        return Err(Error::Usage("norm-VAE has not been trained".into()));
    }
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let x = Matrix::from_rows(params.feature_dim, samples.iter().map(|s| s.features.as_slice()))?;
    let stats = encode(params, &x, from)?;
    let dz = params.latent_dim;
    let mut eps = Matrix::zeros(samples.len(), dz);
    for (i, s) in samples.iter().enumerate() {
        let mut rng = stream.derive(s.id);
        eps.row_mut(i).iter_mut().for_each(|e| *e = rng.standard_normal());
    }
    let z = reparameterize_with(&stats.mu, &stats.sigma, &eps)?;
    let out = decode(params, &z, to)?;
    Ok(samples
        .iter()
        .zip(out.iter_rows())
        .map(|(s, row)| synthetic(s, from, to, row.to_vec()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Activation, Layer};

    fn tiny_config() -> VaeConfig {
        VaeConfig {
            epochs: 3,
            batch_size: 4,
            latent_dim: 3,
            hidden_dim: 8,
            dropout: 0.0,
            ..VaeConfig::default()
        }
    }

    fn sample(id: u64, domain: Domain, label: usize, features: Vec<f64>) -> LabelledSample {
        LabelledSample {
            id,
            domain,
            origin: Origin::Real,
            label,
            features,
        }
    }

    #[test]
    fn heads_normalise_to_unit_sphere() {
        let (mu, sigma) = normalize_heads(&[3.0, 4.0], &[-3.0, 4.0]).unwrap();
        assert_eq!(mu, vec![0.6, 0.8]);
        assert_eq!(sigma, vec![0.6, 0.8]);
        assert!(matches!(normalize_heads(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateEncoding { head: "mu" })));
        assert!(matches!(normalize_heads(&[1.0, 0.0], &[0.0, 0.0]), Err(Error::DegenerateEncoding { head: "sigma" })));
    }

    #[test]
    fn reparameterize_edge_cases() {
        let mu = Matrix::from_vec(1, 2, vec![0.6, 0.8]).unwrap();
        let sigma = Matrix::from_vec(1, 2, vec![0.8, 0.6]).unwrap();
        assert_eq!(reparameterize_with(&mu, &sigma, &Matrix::zeros(1, 2)).unwrap(), mu);
        let z = reparameterize(&mu, &Matrix::zeros(1, 2), &mut RngStream::new(3, "eps")).unwrap();
        assert_eq!(z, mu);
    }

    #[test]
    fn decoder_with_zero_weights_returns_bias() {
        let mut rng = RngStream::new(0, "t");
        let mut params = NormVaeParams::init(4, &tiny_config(), &mut rng).unwrap();
        let dec = params.decoder_mut();
        for i in 0..2 {
            let l = dec.layer_mut(i);
            l.weight.data_mut().fill(0.0);
        }
        dec.layer_mut(1).bias = vec![1.0, -2.0, 0.5, 3.0];
        let z = Matrix::from_vec(2, 3, vec![0.1, 0.2, 0.3, -1.0, 5.0, 2.0]).unwrap();
        let out = decode(&params, &z, Domain::Target).unwrap();
        for row in out.iter_rows() {
            assert_eq!(row, &[1.0, -2.0, 0.5, 3.0]);
        }
    }

    #[test]
    fn domain_code_changes_decoding() {
        let params = NormVaeParams::init(4, &tiny_config(), &mut RngStream::new(0, "t")).unwrap();
        let z = Matrix::from_vec(1, 3, vec![0.5, -0.5, 0.2]).unwrap();
        assert_ne!(
            decode(&params, &z, Domain::Source).unwrap(),
            decode(&params, &z, Domain::Target).unwrap()
        );
    }

    #[test]
    fn wrong_latent_width_rejected() {
        let params = NormVaeParams::init(4, &tiny_config(), &mut RngStream::new(0, "t")).unwrap();
        assert!(matches!(decode(&params, &Matrix::zeros(1, 4), Domain::Source), Err(Error::Shape(_))));
        assert!(matches!(encode(&params, &Matrix::zeros(1, 3), Domain::Source), Err(Error::Shape(_))));
    }

    #[test]
    fn mismatched_pair_is_rejected() {
        let s = sample(0, Domain::Source, 1, vec![0.0; 4]);
        let t = sample(0, Domain::Target, 2, vec![0.0; 4]);
        assert!(CrossDomainPair::new(&s, &t).is_err());
        let params = NormVaeParams::init(4, &tiny_config(), &mut RngStream::new(0, "t")).unwrap();
        let bad = CrossDomainPair {
            source_id: 0,
            target_id: 0,
            source_class: 1,
            target_class: 2,
            x_s: vec![0.0; 4],
            x_t: vec![0.0; 4],
        };
        assert!(matches!(norm_vae_loss(&params, &[bad], &mut RngStream::new(0, "n")), Err(Error::Usage(_))));
    }

    #[test]
    fn loss_is_exactly_the_four_terms() {
        let params = NormVaeParams::init(4, &tiny_config(), &mut RngStream::new(0, "t")).unwrap();
        let s = sample(0, Domain::Source, 0, vec![0.3, -0.2, 1.0, 0.1]);
        let t = sample(0, Domain::Target, 0, vec![-0.5, 0.4, 0.2, 0.9]);
        let pair = CrossDomainPair::new(&s, &t).unwrap();
        let (loss, _) = norm_vae_loss(&params, &[pair], &mut RngStream::new(0, "n")).unwrap();
        let terms = [loss.recon_source, loss.recon_target, loss.cross_source, loss.cross_target];
        assert_eq!(loss.total, terms.iter().sum::<f64>());
        for (i, term) in terms.iter().enumerate() {
            assert!(*term > 0.0, "term {i} vanished");
            let without: f64 = terms.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum();
            assert_ne!(without, loss.total);
        }
    }

    #[test]
    fn pairing_rules() {
        let sources: Vec<_> = (0..5).map(|i| sample(i, Domain::Source, 3, vec![i as f64])).collect();
        let mut rng = RngStream::new(0, "pair");
        assert!(pair_samples(&sources, &[], &mut rng).is_empty());

        let lone = sample(42, Domain::Target, 3, vec![9.0]);
        let pairs = pair_samples(&sources, &[lone], &mut rng);
        assert_eq!(pairs.len(), 5);
        assert!(pairs.iter().all(|p| p.target_id == 42 && p.class() == 3));

        let mut mixed = sources.clone();
        mixed.push(sample(9, Domain::Source, 1, vec![0.0]));
        mixed.push(sample(10, Domain::Source, 7, vec![0.0]));
        let targets = [sample(1, Domain::Target, 3, vec![1.0]), sample(2, Domain::Target, 1, vec![2.0])];
        let pairs = pair_samples(&mixed, &targets, &mut rng);
        let mut hist = BTreeMap::new();
        for p in &pairs {
            *hist.entry(p.class()).or_insert(0) += 1;
        }
        assert_eq!(hist, BTreeMap::from([(1, 1), (3, 5)]));
    }

    #[test]
    fn empty_selection_skips_training() {
        let sources: Vec<_> = (0..5).map(|i| sample(i, Domain::Source, 0, vec![0.0; 4])).collect();
        assert!(matches!(train_norm_vae(&sources, &[], &tiny_config()).unwrap(), VaeFit::Skipped));
    }

    fn toy_sets() -> (Vec<LabelledSample>, Vec<LabelledSample>) {
        let mut rng = RngStream::new(1, "toy");
        let mut src = Vec::new();
        let mut tgt = Vec::new();
        for i in 0..24 {
            let c = (i % 2) as usize;
            let base = if c == 0 { -1.0 } else { 1.0 };
            src.push(sample(i, Domain::Source, c, (0..4).map(|_| base + 0.1 * rng.standard_normal()).collect()));
            tgt.push(sample(i, Domain::Target, c, (0..4).map(|_| base + 2.0 + 0.1 * rng.standard_normal()).collect()));
        }
        (src, tgt)
    }

    #[test]
    fn training_is_deterministic_and_generation_tagged() {
        let (src, tgt) = toy_sets();
        let cfg = tiny_config();
        let fit = |c: &VaeConfig| match train_norm_vae(&src, &tgt, c).unwrap() {
            VaeFit::Trained { params, epoch_losses } => (params, epoch_losses),
            VaeFit::Skipped => panic!("pairs exist"),
        };
        let (a, la) = fit(&cfg);
        let (b, lb) = fit(&cfg);
        assert_eq!(a, b);
        assert_eq!(la, lb);

        let mut r1 = RngStream::new(5, "gen");
        let mut r2 = RngStream::new(5, "gen");
        let g1 = generate_cross_domain(&a, &src[3], Domain::Source, Domain::Target, &mut r1).unwrap();
        let g2 = generate_cross_domain(&a, &src[3], Domain::Source, Domain::Target, &mut r2).unwrap();
        assert_eq!(g1, g2);
        assert_eq!((g1.domain, g1.label, g1.origin), (Domain::Target, src[3].label, Origin::Synthetic { from: Domain::Source }));

        let stream = RngStream::new(5, "batch");
        let all = generate_batch(&a, &src, Domain::Source, Domain::Target, &stream).unwrap();
        let one = generate_batch(&a, &src[3..4], Domain::Source, Domain::Target, &stream).unwrap();
        assert_eq!(all[3], one[0]);
        assert_eq!(all.iter().map(|s| s.label).collect::<Vec<_>>(), src.iter().map(|s| s.label).collect::<Vec<_>>());
    }

    #[test]
    fn same_domain_generation_is_reconstruction() {
        let (src, tgt) = toy_sets();
        let VaeFit::Trained { params, .. } = train_norm_vae(&src, &tgt, &tiny_config()).unwrap() else {
            panic!("pairs exist")
        };
        let mut rng = RngStream::new(2, "r");
        let g = generate_cross_domain(&params, &src[0], Domain::Source, Domain::Source, &mut rng).unwrap();
        let mut rng = RngStream::new(2, "r");
        let code = sample_latent(&params, &src[0].features, Domain::Source, &mut rng).unwrap();
        let recon = decode(&params, &Matrix::from_vec(1, 3, code.z).unwrap(), Domain::Source).unwrap();
        assert_eq!(g.features, recon.into_vec());
    }

    #[test]
    fn untrained_model_cannot_generate() {
        let params = NormVaeParams::init(4, &tiny_config(), &mut RngStream::new(0, "t")).unwrap();
        let s = sample(0, Domain::Source, 0, vec![0.0; 4]);
        let mut rng = RngStream::new(0, "g");
        assert!(matches!(
            generate_cross_domain(&params, &s, Domain::Source, Domain::Target, &mut rng),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let params = NormVaeParams::init(4, &tiny_config(), &mut RngStream::new(0, "t")).unwrap();
        assert_eq!(NormVaeParams::from_json(&params.to_json().unwrap()).unwrap(), params);
        let bogus = Layer { weight: Matrix::zeros(3, 3), bias: vec![0.0; 3], activation: Activation::Identity };
        let enc = DenseNet::new(vec![bogus.clone()], 0.0).unwrap();
        assert!(NormVaeParams::from_nets(enc.clone(), enc, false).is_err());
    }
}
