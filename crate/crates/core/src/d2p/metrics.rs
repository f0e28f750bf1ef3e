use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageMetrics {
    pub psnr: f64,
    pub mssim: f64,
    pub mse: f64,
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid-mode separable filtering of one channel.
fn blur(plane: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn mssim_channel(a: &[f64], b: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> f64 {
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    };
    let mu_a = blur(a, h, w, k);
    let mu_b = blur(b, h, w, k);
    let aa = blur(&prod(&|x, _| x * x), h, w, k);
    let bb = blur(&prod(&|_, y| y * y), h, w, k);
    let ab = blur(&prod(&|x, y| x * y), h, w, k);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
            / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    total / n as f64
}

/// MSE, PSNR (peak 1.0) and mean SSIM with an 11x11 Gaussian window
/// (sigma 1.5), averaged over channels.
pub fn image_metrics(a: &ImageTensor, b: &ImageTensor) -> Result<ImageMetrics> {
    a.ensure_same_shape(b, "image_metrics")?;
    let (h, w, c) = a.shape();
    if h < WINDOW || w < WINDOW {
        return Err(Error::Shape(format!(
            "images must be at least {WINDOW}x{WINDOW} for MSSIM, got {h}x{w}"
        )));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    let psnr = if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    };
    let k = gaussian_window();
    let mut mssim = 0.0;
    for ch in 0..c {
        let pa: Vec<f64> = a.data().iter().skip(ch).step_by(c).copied().collect();
        let pb: Vec<f64> = b.data().iter().skip(ch).step_by(c).copied().collect();
        mssim += mssim_channel(&pa, &pb, h, w, &k);
    }
    Ok(ImageMetrics {
        psnr,
        mssim: mssim / c as f64,
        mse,
    })
}
