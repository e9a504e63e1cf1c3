use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

fn check<R: Real>(op: &'static str, a: &Tensor<R>, b: &Tensor<R>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::shape(op, "empty images"));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP_DB`].
pub fn psnr<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> Result<f64> {
    check("psnr", a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

pub fn l1<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> Result<f64> {
    check("l1", a, b)?;
    Ok(a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).abs())
        .sum::<f64>()
        / a.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub view: String,
    pub psnr: f64,
    pub l1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<EvalRecord>,
    pub mean_psnr: f64,
    pub median_psnr: f64,
    pub mean_l1: f64,
}

impl EvalReport {
    pub fn from_records(views: Vec<EvalRecord>) -> Self {
        let n = views.len().max(1) as f64;
        let mut ps: Vec<f64> = views.iter().map(|r| r.psnr).collect();
        ps.sort_by(f64::total_cmp);
        let median_psnr = match ps.len() {
            0 => 0.0,
            k if k % 2 == 1 => ps[k / 2],
            k => 0.5 * (ps[k / 2 - 1] + ps[k / 2]),
        };
        EvalReport {
            mean_psnr: views.iter().map(|r| r.psnr).sum::<f64>() / n,
            median_psnr,
            mean_l1: views.iter().map(|r| r.l1).sum::<f64>() / n,
            views,
        }
    }
}
