use crate::autodiff::MlpWeights;
use crate::data::SceneDataset;
use crate::error::{Error, Result};
use crate::field::{render_view, RenderedView};
use crate::imaging::{ssim, DepthMap, Image};

/// `-10 log10(MSE)` over all channels of two `[0, 1]` images. The flag is set
/// (and the value is infinite) when the images are identical.
pub fn psnr(a: &Image, b: &Image) -> Result<(f64, bool)> {
    if a.data().len() != b.data().len() || a.width() != b.width() {
        return Err(Error::ShapeMismatch("psnr of differently sized images".into()));
    }
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        Ok((f64::INFINITY, true))
    } else {
        Ok((-10.0 * mse.log10(), false))
    }
}

/// Root mean squared depth error over pixels with positive ground-truth depth.
pub fn depth_rmse(pred: &DepthMap, truth: &DepthMap) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for (p, t) in pred.data.iter().zip(&truth.data) {
        if *t > 0.0 {
            s += (p - t) * (p - t);
            n += 1;
        }
    }
    (n > 0).then(|| (s / n as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub index: usize,
    pub psnr: f64,
    pub psnr_infinite: bool,
    pub ssim: f64,
    pub depth_rmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub images: Vec<ImageMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_depth_rmse: Option<f64>,
}

impl EvalReport {
    pub fn log_line(&self, step: u64) -> String {
        let mut s = format!("eval step={step} psnr={:.6} ssim={:.6}", self.mean_psnr, self.mean_ssim);
        if let Some(d) = self.mean_depth_rmse {
            s += &format!(" depth_rmse={d:.6}");
        }
        s
    }
}

/// Renders view `k` of the dataset at integer pixels.
pub fn render_index(
    coarse: &MlpWeights,
    fine: &MlpWeights,
    ds: &SceneDataset,
    k: usize,
    n_coarse: usize,
    n_fine: usize,
) -> Result<RenderedView> {
    let (cam, pose) = ds.cameras.get(k).ok_or_else(|| Error::Config(format!("no camera {k}")))?;
    render_view(coarse, fine, cam, pose, ds.config.near, ds.config.far, n_coarse, n_fine)
}

/// PSNR, SSIM and (when ground truth exists) depth RMSE on the test split.
pub fn evaluate(coarse: &MlpWeights, fine: &MlpWeights, ds: &SceneDataset, n_coarse: usize, n_fine: usize) -> Result<EvalReport> {
    if ds.test.is_empty() {
        return Err(Error::Dataset("test split is empty".into()));
    }
    let mut images = Vec::with_capacity(ds.test.len());
    for &k in &ds.test {
        let view = render_index(coarse, fine, ds, k, n_coarse, n_fine)?;
        images.push(metrics_for(k, &view, &ds.images[k], ds.depths.as_ref().map(|d| &d[k]))?);
    }
    Ok(summarize(images))
}

pub fn metrics_for(index: usize, view: &RenderedView, truth: &Image, depth: Option<&DepthMap>) -> Result<ImageMetrics> {
    let img = view.image();
    let (p, inf) = psnr(&img, truth)?;
    Ok(ImageMetrics {
        index,
        psnr: p,
        psnr_infinite: inf,
        ssim: ssim(&img, truth)?,
        depth_rmse: depth.and_then(|d| depth_rmse(&view.depth_map(), d)),
    })
}

pub fn summarize(images: Vec<ImageMetrics>) -> EvalReport {
    let n = images.len() as f64;
    let mean_psnr = images.iter().map(|m| m.psnr).sum::<f64>() / n;
    let mean_ssim = images.iter().map(|m| m.ssim).sum::<f64>() / n;
    let depths: Vec<f64> = images.iter().filter_map(|m| m.depth_rmse).collect();
    let mean_depth_rmse = (!depths.is_empty()).then(|| depths.iter().sum::<f64>() / depths.len() as f64);
    EvalReport {
        images,
        mean_psnr,
        mean_ssim,
        mean_depth_rmse,
    }
}
