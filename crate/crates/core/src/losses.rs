//! Scalar objectives for DLLP and LLP-GAN.
//!
//! Every logarithm of a probability goes through [`clamped_ln`]. Functions
//! with a `_grad` suffix return the value together with its analytic
//! gradient and skip simplex validation, so that they can be probed with
//! finite differences off the simplex.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::bagset::{ProportionVector, SIMPLEX_TOL};
use crate::error::{Error, Result};
use crate::netzoo::softmax::overparam_softmax_rows;
use crate::scalar::{clamped_ln, Scalar, LOG_CLAMP};

/// One weighted term of a loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term<T> {
    pub name: &'static str,
    pub value: T,
    pub weight: T,
}

/// A loss and its decomposition; `total == Σ weight · value`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    pub total: T,
    pub terms: Vec<Term<T>>,
}

impl<T: Scalar> LossValue<T> {
    fn from_terms(terms: Vec<Term<T>>) -> Self {
        let total = terms.iter().map(|t| t.weight * t.value).sum();
        Self { total, terms }
    }

    /// Unweighted value of the named term.
    pub fn term(&self, name: &str) -> Option<T> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.terms.iter().all(|t| t.value.is_finite())
    }
}

fn check_rows<T: Scalar>(rows: ArrayView2<T>, what: &str) -> Result<()> {
    for (i, row) in rows.axis_iter(Axis(0)).enumerate() {
        let sum: T = row.iter().copied().sum();
        if row.iter().any(|v| *v < T::zero() || !v.is_finite()) || (sum.as_f64() - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Validation(format!("{what} row {i} is not a probability vector")));
        }
    }
    Ok(())
}

fn check_priors<T: Scalar>(priors: &[ProportionVector<T>], bags: usize, k: usize) -> Result<()> {
    if priors.len() != bags {
        return Err(Error::config(format!("{} priors for {bags} bags", priors.len())));
    }
    if let Some(p) = priors.iter().find(|p| p.k() != k) {
        return Err(Error::shape(format!("prior of length {} but {k} classes", p.k())));
    }
    Ok(())
}

/// Elementwise mean of instance posteriors.
pub fn bag_posterior_mean<T: Scalar>(posteriors: ArrayView2<T>) -> Result<ProportionVector<T>> {
    if posteriors.nrows() == 0 {
        return Err(Error::InvalidBag("bag has no instances".into()));
    }
    check_rows(posteriors, "posterior")?;
    let mean = posteriors.mean_axis(Axis(0)).expect("non-empty");
    ProportionVector::new(mean.to_vec())
}

/// `-Σ_i p_iᵀ ln(p̄_i)`.
pub fn proportion_ce<T: Scalar>(priors: &[ProportionVector<T>], bag_means: &[ProportionVector<T>]) -> Result<T> {
    if priors.len() != bag_means.len() {
        return Err(Error::config(format!("{} priors for {} bag means", priors.len(), bag_means.len())));
    }
    let mut total = T::zero();
    for (p, m) in priors.iter().zip(bag_means) {
        if p.k() != m.k() {
            return Err(Error::shape(format!("prior of length {} vs mean of length {}", p.k(), m.k())));
        }
        total -= p.values().iter().zip(m.values()).map(|(&a, &b)| a * clamped_ln(b)).sum::<T>();
    }
    Ok(total)
}

/// [`proportion_ce`] from instance posteriors, with the gradient w.r.t. every
/// posterior entry.
pub fn proportion_ce_grad<T: Scalar>(
    priors: &[ProportionVector<T>],
    bag_posteriors: &[ArrayView2<T>],
) -> Result<(T, Vec<Array2<T>>)> {
    let k = bag_posteriors.first().map_or(0, |b| b.ncols());
    check_priors(priors, bag_posteriors.len(), k)?;
    let eps = T::lit(LOG_CLAMP);
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(bag_posteriors.len());
    for (prior, rows) in priors.iter().zip(bag_posteriors) {
        let n = rows.nrows();
        if n == 0 {
            return Err(Error::InvalidBag("bag has no instances".into()));
        }
        let mean = rows.mean_axis(Axis(0)).expect("non-empty");
        let mut g_mean = Array1::zeros(k);
        for c in 0..k {
            let p = prior.values()[c];
            total -= p * clamped_ln(mean[c]);
            if mean[c] > eps {
                g_mean[c] = -p / (mean[c] * T::from_usize_lossy(n));
            }
        }
        let g = Array2::from_shape_fn((n, k), |(_, c)| g_mean[c]);
        grads.push(g);
    }
    Ok((total, grads))
}

/// `-Σ p̃ᵀ ln p̃` summed over every row.
pub fn instance_entropy<T: Scalar>(posteriors: ArrayView2<T>) -> Result<T> {
    check_rows(posteriors, "posterior")?;
    Ok(instance_entropy_grad(posteriors).0)
}

pub fn instance_entropy_grad<T: Scalar>(posteriors: ArrayView2<T>) -> (T, Array2<T>) {
    let eps = T::lit(LOG_CLAMP);
    let value = -posteriors.iter().map(|&p| p * clamped_ln(p)).sum::<T>();
    let grad = posteriors.mapv(|p| if p > eps { -(p.ln() + T::one()) } else { -eps.ln() });
    (value, grad)
}

/// `L_prop + λ_ent · E_in`, with terms `l_prop` and `e_in`.
pub fn dllp_total<T: Scalar>(
    priors: &[ProportionVector<T>],
    bag_posteriors: &[ArrayView2<T>],
    lambda_ent: T,
) -> Result<LossValue<T>> {
    if lambda_ent < T::zero() {
        return Err(Error::config(format!("entropy weight must be non-negative, got {lambda_ent}")));
    }
    let means = bag_posteriors.iter().map(|b| bag_posterior_mean(*b)).collect::<Result<Vec<_>>>()?;
    let l_prop = proportion_ce(priors, &means)?;
    let mut e_in = T::zero();
    for b in bag_posteriors {
        e_in += instance_entropy(*b)?;
    }
    Ok(LossValue::from_terms(vec![
        Term { name: "l_prop", value: l_prop, weight: T::one() },
        Term { name: "e_in", value: e_in, weight: lambda_ent },
    ]))
}

/// DLLP loss and its gradient w.r.t. the posteriors of each bag.
pub fn dllp_total_grad<T: Scalar>(
    priors: &[ProportionVector<T>],
    bag_posteriors: &[ArrayView2<T>],
    lambda_ent: T,
) -> Result<(LossValue<T>, Vec<Array2<T>>)> {
    if lambda_ent < T::zero() {
        return Err(Error::config(format!("entropy weight must be non-negative, got {lambda_ent}")));
    }
    let (l_prop, mut grads) = proportion_ce_grad(priors, bag_posteriors)?;
    let mut e_in = T::zero();
    for (g, rows) in grads.iter_mut().zip(bag_posteriors) {
        let (e, ge) = instance_entropy_grad(*rows);
        e_in += e;
        if lambda_ent > T::zero() {
            g.scaled_add(lambda_ent, &ge);
        }
    }
    let loss = LossValue::from_terms(vec![
        Term { name: "l_prop", value: l_prop, weight: T::one() },
        Term { name: "e_in", value: e_in, weight: lambda_ent },
    ]);
    Ok((loss, grads))
}

/// Drops the fake class and renormalizes. A row that is entirely fake maps
/// to the uniform vector.
pub fn normalize_posterior<T: Scalar>(probs: &[T]) -> Vec<T> {
    let k = probs.len() - 1;
    let real: T = probs[..k].iter().copied().sum();
    if (T::one() - probs[k]).abs() <= T::lit(1e-12) || real <= T::zero() {
        return vec![T::one() / T::from_usize_lossy(k); k];
    }
    probs[..k].iter().map(|&p| p / real).collect()
}

/// Row-wise [`normalize_posterior`].
pub fn normalize_posterior_rows<T: Scalar>(probs: ArrayView2<T>) -> Array2<T> {
    let (n, k1) = probs.dim();
    let mut out = Array2::zeros((n, k1 - 1));
    for (src, mut dst) in probs.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let row: Vec<T> = src.iter().copied().collect();
        dst.iter_mut().zip(normalize_posterior(&row)).for_each(|(d, v)| *d = v);
    }
    out
}

/// Discriminator objective: terms `l_real`, `l_fake` (weight 1) and the
/// Jensen lower bound `lb_sup` (weight λ). To be maximized.
pub fn llp_gan_disc_loss<T: Scalar>(
    real_probs: &[ArrayView2<T>],
    fake_probs: ArrayView2<T>,
    priors: &[ProportionVector<T>],
    lambda: T,
) -> Result<LossValue<T>> {
    for b in real_probs {
        check_rows(*b, "real discriminator output")?;
    }
    check_rows(fake_probs, "fake discriminator output")?;
    disc_objective_from_probs(real_probs, fake_probs, priors, lambda)
}

fn disc_objective_from_probs<T: Scalar>(
    real_probs: &[ArrayView2<T>],
    fake_probs: ArrayView2<T>,
    priors: &[ProportionVector<T>],
    lambda: T,
) -> Result<LossValue<T>> {
    if lambda < T::zero() {
        return Err(Error::config(format!("supervised weight must be non-negative, got {lambda}")));
    }
    if fake_probs.nrows() == 0 {
        return Err(Error::config("fake batch is empty"));
    }
    let k1 = fake_probs.ncols();
    if real_probs.iter().any(|b| b.ncols() != k1) {
        return Err(Error::shape("real and fake outputs have different widths"));
    }
    check_priors(priors, real_probs.len(), k1 - 1)?;
    let k = k1 - 1;

    let mut l_real = T::zero();
    let mut lb = T::zero();
    for (rows, prior) in real_probs.iter().zip(priors) {
        let n = rows.nrows();
        if n == 0 {
            return Err(Error::InvalidBag("bag has no instances".into()));
        }
        let inv_n = T::one() / T::from_usize_lossy(n);
        for row in rows.axis_iter(Axis(0)) {
            let row: Vec<T> = row.iter().copied().collect();
            let real_mass: T = row[..k].iter().copied().sum();
            l_real += inv_n * clamped_ln(real_mass);
            let post = normalize_posterior(&row);
            lb += inv_n * prior.values().iter().zip(&post).map(|(&p, &q)| p * clamped_ln(q)).sum::<T>();
        }
    }
    let inv_m = T::one() / T::from_usize_lossy(fake_probs.nrows());
    let l_fake = fake_probs.column(k).iter().map(|&p| inv_m * clamped_ln(p)).sum::<T>();

    Ok(LossValue::from_terms(vec![
        Term { name: "l_real", value: l_real, weight: T::one() },
        Term { name: "l_fake", value: l_fake, weight: T::one() },
        Term { name: "lb_sup", value: lb, weight: lambda },
    ]))
}

/// Gradients of the discriminator objective w.r.t. the K free logits.
#[derive(Debug, Clone)]
pub struct DiscGrad<T> {
    pub value: LossValue<T>,
    pub real: Vec<Array2<T>>,
    pub fake: Array2<T>,
}

/// [`llp_gan_disc_loss`] evaluated from logits, with its gradient.
pub fn llp_gan_disc_loss_grad<T: Scalar>(
    real_logits: &[ArrayView2<T>],
    fake_logits: ArrayView2<T>,
    priors: &[ProportionVector<T>],
    lambda: T,
) -> Result<DiscGrad<T>> {
    let real_probs: Vec<Array2<T>> = real_logits.iter().map(|l| overparam_softmax_rows(*l)).collect();
    let fake_probs = overparam_softmax_rows(fake_logits);
    let views: Vec<ArrayView2<T>> = real_probs.iter().map(|p| p.view()).collect();
    let value = disc_objective_from_probs(&views, fake_probs.view(), priors, lambda)?;

    let eps = T::lit(LOG_CLAMP);
    let k = fake_logits.ncols();
    let mut real = Vec::with_capacity(real_probs.len());
    for (probs, prior) in real_probs.iter().zip(priors) {
        let n = probs.nrows();
        let inv_n = T::one() / T::from_usize_lossy(n);
        let mut g = Array2::zeros((n, k));
        for (row, mut grow) in probs.axis_iter(Axis(0)).zip(g.axis_iter_mut(Axis(0))) {
            let row: Vec<T> = row.iter().copied().collect();
            let fake_p = row[k];
            let real_mass: T = row[..k].iter().copied().sum();
            let degenerate = (T::one() - fake_p).abs() <= T::lit(1e-12) || real_mass <= T::zero();
            let post = normalize_posterior(&row);
            // d ln(1 - P_fake) / dl_m = P_fake · p̃_m
            if real_mass > eps {
                for m in 0..k {
                    grow[m] += inv_n * fake_p * post[m];
                }
            }
            // d Σ_c p(c) ln p̃_c / dl_m over unclamped classes
            if !degenerate {
                let mut active_mass = T::zero();
                for c in 0..k {
                    if post[c] > eps {
                        active_mass += prior.values()[c];
                        grow[c] += lambda * inv_n * prior.values()[c];
                    }
                }
                for m in 0..k {
                    grow[m] -= lambda * inv_n * post[m] * active_mass;
                }
            }
        }
        real.push(g);
    }

    let m_fake = fake_probs.nrows();
    let inv_m = T::one() / T::from_usize_lossy(m_fake);
    let mut fake = Array2::zeros((m_fake, k));
    for (row, mut grow) in fake_probs.axis_iter(Axis(0)).zip(fake.axis_iter_mut(Axis(0))) {
        if row[k] > eps {
            for m in 0..k {
                grow[m] = -inv_m * row[m];
            }
        }
    }
    Ok(DiscGrad { value, real, fake })
}

/// `Σ_i p_iᵀ ln(p̄_i)` with p̄_i the mean normalized posterior of bag i.
pub fn exact_proportion_term<T: Scalar>(real_probs: &[ArrayView2<T>], priors: &[ProportionVector<T>]) -> Result<T> {
    let k1 = real_probs.first().map_or(1, |b| b.ncols());
    check_priors(priors, real_probs.len(), k1 - 1)?;
    let means = real_probs
        .iter()
        .map(|b| {
            check_rows(*b, "real discriminator output")?;
            bag_posterior_mean(normalize_posterior_rows(*b).view())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(-proportion_ce(priors, &means)?)
}

/// `‖real_mean − fake_mean‖²`.
pub fn feature_matching_loss<T: Scalar>(real_feature_mean: ArrayView1<T>, fake_feature_mean: ArrayView1<T>) -> Result<T> {
    if real_feature_mean.len() != fake_feature_mean.len() {
        return Err(Error::shape(format!(
            "feature means of length {} and {}",
            real_feature_mean.len(),
            fake_feature_mean.len()
        )));
    }
    Ok(real_feature_mean.iter().zip(fake_feature_mean.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum())
}

/// Feature matching from batches of features, with the gradient w.r.t. each
/// fake feature row. Real features are treated as constants.
pub fn feature_matching_grad<T: Scalar>(real_features: ArrayView2<T>, fake_features: ArrayView2<T>) -> Result<(T, Array2<T>)> {
    if real_features.nrows() == 0 || fake_features.nrows() == 0 {
        return Err(Error::config("feature matching needs non-empty real and fake batches"));
    }
    let real_mean = real_features.mean_axis(Axis(0)).expect("non-empty");
    let fake_mean = fake_features.mean_axis(Axis(0)).expect("non-empty");
    let value = feature_matching_loss(real_mean.view(), fake_mean.view())?;
    let scale = T::lit(2.0) / T::from_usize_lossy(fake_features.nrows());
    let diff = (&fake_mean - &real_mean) * scale;
    let grad = Array2::from_shape_fn(fake_features.raw_dim(), |(_, j)| diff[j]);
    Ok((value, grad))
}
