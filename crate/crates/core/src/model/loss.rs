use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::MaskPlan;
use crate::numerics::{Tape, Tensor, Var};

pub const PATCH_NORM_EPS: f64 = 1e-6;

/// Standardises each row: `(x − mean)/sqrt(var + 1e-6)`.
pub fn normalize_patches(patches: &Tensor) -> Result<Tensor> {
    let (n, d) = patches.dims2()?;
    let mut out = patches.data().to_vec();
    for row in out.chunks_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + PATCH_NORM_EPS).sqrt();
        row.iter_mut().for_each(|x| *x = (*x - mean) * inv);
    }
    Tensor::new(vec![n, d], out)
}

/// Mean squared error over masked patches only.
pub fn reconstruction_loss(
    tape: &mut Tape,
    pred: Var,
    target: &Tensor,
    plan: &MaskPlan,
    normalize_per_patch: bool,
) -> Result<Var> {
    if tape.shape(pred) != target.shape() || target.rows() != plan.n_total {
        return Err(Error::shape(
            "reconstruction_loss",
            format!(
                "pred {:?}, target {:?}, plan of {}",
                tape.shape(pred),
                target.shape(),
                plan.n_total
            ),
        ));
    }
    if plan.n_masked() == 0 {
        return Err(Error::Masking(
            "reconstruction loss needs at least one masked patch".into(),
        ));
    }
    let target = if normalize_per_patch {
        normalize_patches(target)?
    } else {
        target.clone()
    };
    let p = tape.gather_rows(pred, &plan.masked_idx)?;
    let t = tape.constant(target.gather_rows(&plan.masked_idx)?);
    let diff = tape.sub(p, t)?;
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}

/// `−(1/N) Σ_i log softmax_j(c_iᵀ x_j)[i]` with row-max stabilisation.
pub fn infonce_loss(tape: &mut Tape, contexts: Var, targets: Var) -> Result<Var> {
    let (n, d) = tape.value(contexts).dims2()?;
    if tape.value(targets).dims2()? != (n, d) {
        return Err(Error::shape(
            "infonce_loss",
            format!("contexts {n}x{d}, targets {:?}", tape.shape(targets)),
        ));
    }
    let xt = tape.transpose(targets)?;
    let logits = tape.matmul(contexts, xt)?;
    let logp = tape.log_softmax_rows(logits)?;
    let mut eye = vec![0.0; n * n];
    (0..n).for_each(|i| eye[i * n + i] = 1.0);
    let eye = tape.constant(Tensor::new(vec![n, n], eye)?);
    let diag = tape.mul(logp, eye)?;
    let s = tape.sum(diag);
    Ok(tape.scale(s, -1.0 / n as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLoss {
    Bce,
    Ce,
}

impl std::str::FromStr for ClassLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bce" => Ok(ClassLoss::Bce),
            "ce" => Ok(ClassLoss::Ce),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

/// BCE is averaged over classes in log-sigmoid form `softplus(z) − y·z`;
/// CE is `−Σ y·log softmax(z)`.
pub fn classification_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[f64],
    kind: ClassLoss,
) -> Result<Var> {
    let c = tape.value(logits).len();
    if labels.len() != c {
        return Err(Error::shape(
            "classification_loss",
            format!("{} labels for {c} classes", labels.len()),
        ));
    }
    let z = tape.reshape(logits, &[1, c])?;
    let y = tape.constant(Tensor::new(vec![1, c], labels.to_vec())?);
    match kind {
        ClassLoss::Bce => {
            let sp = tape.softplus(z);
            let yz = tape.mul(y, z)?;
            let l = tape.sub(sp, yz)?;
            Ok(tape.mean(l))
        }
        ClassLoss::Ce => {
            let logp = tape.log_softmax_rows(z)?;
            let yl = tape.mul(y, logp)?;
            let s = tape.sum(yl);
            Ok(tape.scale(s, -1.0))
        }
    }
}
