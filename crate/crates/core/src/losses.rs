//! Objective terms: conditional adversarial, parallel classification,
//! cascade feature distance, gradient penalty and L1, plus their weighted total.

use pipgan_autograd::{no_grad, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::CascadeNet;

/// Lower clamp for probabilities inside logarithms.
pub const LOG_EPS: f64 = 1e-7;
const NORM_EPS: f64 = 1e-12;

/// Weights of the generator objective terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    #[serde(rename = "xi1")]
    pub adversarial: f64,
    #[serde(rename = "xi2")]
    pub cascade: f64,
    #[serde(rename = "xi3")]
    pub gradient_penalty: f64,
    #[serde(rename = "xi4")]
    pub classification: f64,
    #[serde(rename = "xi5")]
    pub l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::standard()
    }
}

impl LossWeights {
    pub const fn standard() -> Self {
        LossWeights { adversarial: 1.0, cascade: 1.0, gradient_penalty: 1.0, classification: 10.0, l1: 50.0 }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.adversarial, self.cascade, self.gradient_penalty, self.classification, self.l1]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.as_array().iter().enumerate() {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::InvalidConfig(format!("loss weight xi{} = {w} must be finite and >= 0", i + 1)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Every stage weighted 1; each stage is already a mean over its map.
    #[default]
    Uniform,
    /// `1 / elements in the stage's map` (per sample).
    InverseSize,
}

impl LambdaMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(LambdaMode::Uniform),
            "inverse_size" => Ok(LambdaMode::InverseSize),
            o => Err(Error::InvalidConfig(format!("lambda mode `{o}` (uniform|inverse_size)"))),
        }
    }
}

/// Per-stage weights of the cascade loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeWeights(pub Vec<f64>);

impl CascadeWeights {
    pub fn uniform(stages: usize) -> Self {
        CascadeWeights(vec![1.0; stages])
    }

    /// Resolves `mode` for the feature maps `net` produces at `image_size`.
    pub fn for_mode(mode: LambdaMode, net: &CascadeNet, image_size: usize) -> Result<Self> {
        match mode {
            LambdaMode::Uniform => Ok(Self::uniform(net.num_stages())),
            LambdaMode::InverseSize => {
                let probe = Tensor::zeros(&[1, 3, image_size, image_size]);
                let feats = no_grad(|| net.features(&probe))?;
                Ok(CascadeWeights(feats.iter().map(|f| 1.0 / f.numel() as f64).collect()))
            }
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        CascadeWeights(self.0.iter().map(|l| l * c).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidConfig(format!("cascade weights must be finite and >= 0: {:?}", self.0)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialForm {
    /// Generator minimizes `-log σ(fake)`.
    #[default]
    NonSaturating,
    /// Generator minimizes `log(1 - σ(fake))`.
    Minimax,
}

fn clamped_log(p: &Tensor) -> Tensor {
    p.clamp(LOG_EPS, 1.0).log()
}

/// `mean[-log σ(real)] + mean[-log(1 - σ(fake))]` over the logit maps.
pub fn adversarial_d_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Tensor {
    let real = clamped_log(&real_logits.sigmoid()).mean_all().neg();
    let fake = clamped_log(&fake_logits.neg().sigmoid()).mean_all().neg();
    real.add(&fake)
}

pub fn adversarial_g_loss(fake_logits: &Tensor, form: AdversarialForm) -> Tensor {
    match form {
        AdversarialForm::NonSaturating => clamped_log(&fake_logits.sigmoid()).mean_all().neg(),
        AdversarialForm::Minimax => clamped_log(&fake_logits.neg().sigmoid()).mean_all(),
    }
}

/// Softmax cross entropy of `[N, K]` logits against class indices, batch-averaged.
pub fn classification_loss(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::ShapeMismatch { context: "classification logits".into(), expected: vec![labels.len(), 0], actual: logits.shape().to_vec() });
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if n == 0 {
        return Err(Error::Empty("classification batch".into()));
    }
    let mut max = vec![0.0; n];
    let mut onehot = vec![0.0; n * k];
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        onehot[i * k + label] = 1.0;
        max[i] = logits.data()[i * k..(i + 1) * k].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    let z = logits.sub(&Tensor::from_vec(max, &[n, 1]));
    let lse = z.exp().sum_to(&[n, 1]).log();
    let picked = z.mul(&Tensor::from_vec(onehot, &[n, k])).sum_to(&[n, 1]);
    Ok(lse.sub(&picked).mean_all())
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch { context: what.into(), expected: a.shape().to_vec(), actual: b.shape().to_vec() });
    }
    Ok(())
}

/// `mean|target - generated|` over every element.
pub fn l1_loss(target: &Tensor, generated: &Tensor) -> Result<Tensor> {
    check_same(target, generated, "l1 loss")?;
    Ok(target.sub(generated).abs().mean_all())
}

/// `Σ_n λ_n · mean|Φ_n(target) - Φ_n(generated)|`. The target features carry no history.
pub fn cascade_loss(net: &CascadeNet, target: &Tensor, generated: &Tensor, weights: &CascadeWeights) -> Result<Tensor> {
    check_same(target, generated, "cascade loss")?;
    if weights.0.len() != net.num_stages() {
        return Err(Error::InvalidConfig(format!("{} cascade weights for {} feature stages", weights.0.len(), net.num_stages())));
    }
    let tf = no_grad(|| net.features(&target.detach()))?;
    let gf = net.features(generated)?;
    let mut total = Tensor::scalar(0.0);
    for ((t, g), &lambda) in tf.iter().zip(&gf).zip(&weights.0) {
        total = total.add(&t.sub(g).abs().mean_all().mul_scalar(lambda));
    }
    Ok(total)
}

/// One interpolation coefficient per sample, uniform on [0, 1].
pub fn sample_alpha(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// `mean[(‖∇_x̂ score(x̂)‖₂ - 1)²]` at `x̂ = (1-α)·real + α·fake`, one α per sample.
///
/// `score` maps a candidate batch to per-sample scores `[N]` (the condition
/// image is bound inside it and stays fixed). With `detach_fake` the penalty
/// carries no history back into whatever produced `fake`.
pub fn gradient_penalty(
    score: impl Fn(&Tensor) -> Result<Tensor>,
    real: &Tensor,
    fake: &Tensor,
    alpha: &[f64],
    detach_fake: bool,
) -> Result<Tensor> {
    check_same(real, fake, "gradient penalty")?;
    let n = real.shape()[0];
    if alpha.len() != n {
        return Err(Error::ShapeMismatch { context: "interpolation coefficients".into(), expected: vec![n], actual: vec![alpha.len()] });
    }
    let mut bshape = vec![1; real.rank()];
    bshape[0] = n;
    let a = Tensor::from_vec(alpha.to_vec(), &bshape);
    let keep = Tensor::from_vec(alpha.iter().map(|x| 1.0 - x).collect(), &bshape);
    let x_hat = if detach_fake {
        real.detach().mul(&keep).add(&fake.detach().mul(&a)).detach_var()
    } else {
        let mixed = real.detach().mul(&keep).add(&fake.mul(&a));
        if mixed.requires_grad() { mixed } else { mixed.detach_var() }
    };
    let scores = score(&x_hat)?;
    if scores.shape() != [n] {
        return Err(Error::ShapeMismatch { context: "critic scores".into(), expected: vec![n], actual: scores.shape().to_vec() });
    }
    let grad = scores.sum_all().grad(&[&x_hat], true).remove(0);
    let per = grad.numel() / n;
    let norm = grad.square().reshape(&[n, per]).sum_to(&[n, 1]).add_scalar(NORM_EPS).sqrt();
    Ok(norm.add_scalar(-1.0).square().mean_all())
}

/// Values (or tensors) of the five generator objective terms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTerms<T> {
    pub adversarial: T,
    pub cascade: T,
    pub gradient_penalty: T,
    pub classification: T,
    pub l1: T,
}

impl GeneratorTerms<f64> {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.adversarial * self.adversarial
            + w.cascade * self.cascade
            + w.gradient_penalty * self.gradient_penalty
            + w.classification * self.classification
            + w.l1 * self.l1
    }
}

/// Weighted sum of the five terms.
pub fn total_generator_loss(parts: &GeneratorTerms<Tensor>, w: &LossWeights) -> Tensor {
    parts
        .adversarial
        .mul_scalar(w.adversarial)
        .add(&parts.cascade.mul_scalar(w.cascade))
        .add(&parts.gradient_penalty.mul_scalar(w.gradient_penalty))
        .add(&parts.classification.mul_scalar(w.classification))
        .add(&parts.l1.mul_scalar(w.l1))
}

/// Confirms gradients of gradients are available (d²/dx² x³ at 2 is 12).
pub fn check_second_order() -> Result<()> {
    let x = Tensor::var(vec![2.0], &[1]);
    let y = x.square().mul(&x).sum_all();
    let dy = y.grad(&[&x], true).remove(0);
    let d2 = dy.sum_all().grad(&[&x], false).remove(0);
    if (d2.item() - 12.0).abs() > 1e-9 || !dy.requires_grad() {
        return Err(Error::Capability("second-order differentiation".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect()
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn balanced_logits_give_closed_forms() {
        let z = Tensor::zeros(&[3, 1, 2, 2]);
        assert!((adversarial_d_loss(&z, &z).item() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((adversarial_g_loss(&z, AdversarialForm::NonSaturating).item() - 2f64.ln()).abs() < 1e-12);
        assert!((adversarial_g_loss(&z, AdversarialForm::Minimax).item() + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_limit() {
        let real = Tensor::full(&[2, 1], 40.0);
        let fake = Tensor::full(&[2, 1], -40.0);
        assert!(adversarial_d_loss(&real, &fake).item() < 1e-12);
        // clamped at the other extreme
        let bad = adversarial_d_loss(&fake, &real).item();
        assert!((bad - 2.0 * -(LOG_EPS.ln())).abs() < 1e-9);
    }

    #[test]
    fn adversarial_matches_scalar_oracle() {
        let r = random(12, 1, 4.0);
        let f = random(12, 2, 4.0);
        let mut want_d = 0.0;
        let mut want_g = 0.0;
        for i in 0..12 {
            want_d += -sigmoid(r[i]).max(LOG_EPS).ln() - (1.0 - sigmoid(f[i])).max(LOG_EPS).ln();
            want_g += -sigmoid(f[i]).max(LOG_EPS).ln();
        }
        let rt = Tensor::from_vec(r, &[3, 1, 2, 2]);
        let ft = Tensor::from_vec(f, &[3, 1, 2, 2]);
        assert!((adversarial_d_loss(&rt, &ft).item() - want_d / 12.0).abs() < 1e-12);
        assert!((adversarial_g_loss(&ft, AdversarialForm::NonSaturating).item() - want_g / 12.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_cases() {
        for k in [2usize, 5, 7] {
            let l = classification_loss(&Tensor::zeros(&[4, k]), &[0, 1, 1, 0]).unwrap().item();
            assert!((l - (k as f64).ln()).abs() < 1e-12);
        }
        let mut v = vec![0.0; 5];
        v[3] = 40.0;
        assert!(classification_loss(&Tensor::from_vec(v, &[1, 5]), &[3]).unwrap().item() < 1e-12);
        let logits = random(6, 3, 3.0);
        let got = classification_loss(&Tensor::from_vec(logits.clone(), &[2, 3]), &[2, 0]).unwrap().item();
        let brute = |row: &[f64], y: usize| -> f64 { -(row[y].exp() / row.iter().map(|x| x.exp()).sum::<f64>()).ln() };
        let want = (brute(&logits[0..3], 2) + brute(&logits[3..6], 0)) / 2.0;
        assert!((got - want).abs() < 1e-9);
        assert!(matches!(classification_loss(&Tensor::zeros(&[1, 3]), &[3]), Err(Error::LabelOutOfRange { label: 3, classes: 3 })));
    }

    #[test]
    fn l1_cases() {
        let a = Tensor::from_vec(random(48, 4, 1.0), &[1, 3, 4, 4]);
        assert_eq!(l1_loss(&a, &a).unwrap().item(), 0.0);
        let b = a.add_scalar(0.1);
        assert!((l1_loss(&a, &b).unwrap().item() - 0.1).abs() < 1e-12);
        assert!(l1_loss(&a, &Tensor::zeros(&[1, 3, 2, 2])).is_err());
    }

    #[test]
    fn identity_cascade_half_offset() {
        let net = CascadeNet::identity();
        let a = Tensor::full(&[1, 3, 2, 2], 0.2);
        let b = Tensor::full(&[1, 3, 2, 2], 0.7);
        let l = cascade_loss(&net, &a, &b, &CascadeWeights::uniform(1)).unwrap().item();
        assert!((l - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cascade_symmetric_and_linear() {
        let net = CascadeNet::random(&[3, 3, 3, 3, 3], 9).unwrap();
        let a = Tensor::from_vec(random(3 * 16 * 16, 5, 0.5).iter().map(|v| v + 0.5).collect(), &[1, 3, 16, 16]);
        let b = Tensor::from_vec(random(3 * 16 * 16, 6, 0.5).iter().map(|v| v + 0.5).collect(), &[1, 3, 16, 16]);
        let w = CascadeWeights(vec![1.0, 0.5, 2.0, 0.25, 1.5]);
        let ab = cascade_loss(&net, &a, &b, &w).unwrap().item();
        let ba = cascade_loss(&net, &b, &a, &w).unwrap().item();
        assert_eq!(ab, ba);
        let scaled = cascade_loss(&net, &a, &b, &w.scaled(4.0)).unwrap().item();
        assert_eq!(scaled, 4.0 * ab);
        assert_eq!(cascade_loss(&net, &a, &a, &w).unwrap().item(), 0.0);
        assert!(cascade_loss(&net, &a, &b, &CascadeWeights::uniform(4)).is_err());
        let inv = CascadeWeights::for_mode(LambdaMode::InverseSize, &net, 16).unwrap();
        assert_eq!(inv.0[0], 1.0 / (3.0 * 256.0));
    }

    #[test]
    fn linear_critic_penalty() {
        for norm in [0.5, 1.0, 3.0] {
            // w with ‖w‖ = norm spread over 12 inputs
            let raw = random(12, 7, 1.0);
            let len = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            let w = Tensor::from_vec(raw.iter().map(|v| v * norm / len).collect(), &[1, 3, 2, 2]);
            let critic = |x: &Tensor| Ok(x.mul(&w).reshape(&[2, 12]).sum_to(&[2, 1]).reshape(&[2]));
            let real = Tensor::from_vec(random(24, 8, 1.0), &[2, 3, 2, 2]);
            let fake = Tensor::from_vec(random(24, 9, 1.0), &[2, 3, 2, 2]);
            let gp = gradient_penalty(critic, &real, &fake, &[0.3, 0.9], true).unwrap().item();
            assert!((gp - (norm - 1.0f64).powi(2)).abs() < 1e-9, "norm {norm}: {gp}");
        }
    }

    #[test]
    fn penalty_reaches_critic_weights_not_fake_when_detached() {
        let w = Tensor::var(random(12, 10, 1.0), &[1, 3, 2, 2]);
        let critic = |x: &Tensor| Ok(x.mul(&w).square().reshape(&[1, 12]).sum_to(&[1, 1]).reshape(&[1]));
        let real = Tensor::from_vec(random(12, 11, 1.0), &[1, 3, 2, 2]);
        let fake = Tensor::var(random(12, 12, 1.0), &[1, 3, 2, 2]);
        let gp = gradient_penalty(critic, &real, &fake, &[0.5], true).unwrap();
        let g = gp.backward();
        assert!(g.get(&w).is_some());
        assert!(g.get(&fake).is_none());
        let gp = gradient_penalty(critic, &real, &fake, &[0.5], false).unwrap();
        assert!(gp.backward().get(&fake).is_some());
    }

    #[test]
    fn stub_total_is_63() {
        let one = || Tensor::scalar(1.0);
        let parts = GeneratorTerms { adversarial: one(), cascade: one(), gradient_penalty: one(), classification: one(), l1: one() };
        assert_eq!(total_generator_loss(&parts, &LossWeights::standard()).item(), 63.0);
        let zero = GeneratorTerms::<f64>::default();
        assert_eq!(zero.total(&LossWeights::standard()), 0.0);
        let ones = GeneratorTerms { adversarial: 1.0, cascade: 1.0, gradient_penalty: 1.0, classification: 1.0, l1: 1.0 };
        assert_eq!(ones.total(&LossWeights::standard()), 63.0);
    }

    #[test]
    fn second_order_available() {
        check_second_order().unwrap();
    }

    #[test]
    fn negative_weights_rejected() {
        let w = LossWeights { l1: -1.0, ..LossWeights::standard() };
        assert!(w.validate().is_err());
    }
}
