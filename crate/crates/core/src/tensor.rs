//! Dense image tensors and bilinear resampling with its adjoint.
//!
//! Images are stored row-major in height × width × channel order. Every
//! resampling step in the pipeline is expressed as a [`SamplingGrid`]: one
//! source coordinate per output pixel. The same grid drives the forward
//! interpolation and the adjoint scatter, so gradients flow back through
//! any warp without a general autodiff tape.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    /// A zero tensor with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.height, self.width, self.channels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        let i = self.index(y, x, c);
        self.data[i] = value;
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &ImageTensor, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Clamps every value into [0, 1].
    pub fn clamp_unit(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn clamp_unit_in_place(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self += scale * other`, shapes must agree.
    pub fn add_scaled(&mut self, other: &ImageTensor, scale: f64) -> Result<()> {
        self.ensure_same_shape(other, "add_scaled")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Copies a rectangular window; the window must fit inside the image.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}x{width}@({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(height, width, self.channels, |y, x, c| {
            self.at(top + y, left + x, c)
        }))
    }
}

/// Loss value together with its gradient with respect to one image input.
#[derive(Debug, Clone)]
pub struct GradResult {
    pub value: f64,
    pub grad: ImageTensor,
}

/// Per-output-pixel source coordinates `(u, v)` = (column, row) in source
/// pixel units, pixel centres at integer positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    height: usize,
    width: usize,
    coords: Vec<[f64; 2]>,
}

impl SamplingGrid {
    pub fn new(height: usize, width: usize, coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.len() != height * width {
            return Err(Error::Shape(format!(
                "grid has {} coordinates for a {height}x{width} output",
                coords.len()
            )));
        }
        Ok(Self {
            height,
            width,
            coords,
        })
    }

    pub fn identity(height: usize, width: usize) -> Self {
        Self::from_fn(height, width, |y, x| [x as f64, y as f64])
    }

    /// Builds a grid from an inverse map `(row, col) -> (u, v)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 2]) -> Self {
        let mut coords = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                coords.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            coords,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }
}

/// Bilinear taps of one sample position: up to four `(flat index, weight)`
/// pairs, omitting reads outside the source.
#[derive(Clone, Copy)]
struct Taps {
    idx: [usize; 4],
    w: [f64; 4],
    n: usize,
}

#[inline(always)]
fn taps(u: f64, v: f64, sh: usize, sw: usize) -> Taps {
    let mut t = Taps {
        idx: [0; 4],
        w: [0.0; 4],
        n: 0,
    };
    // Also rejects NaN.
    if !(u > -1.0 && v > -1.0 && u < sw as f64 && v < sh as f64) {
        return t;
    }
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = u - x0;
    let fy = v - y0;
    let (xi, yi) = (x0 as isize, y0 as isize);
    let (sw_i, sh_i) = (sw as isize, sh as isize);
    if xi >= 0 && yi >= 0 && xi + 1 < sw_i && yi + 1 < sh_i {
        let i = yi as usize * sw + xi as usize;
        t.idx = [i, i + 1, i + sw, i + sw + 1];
        t.w = [(1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx];
        t.n = 4;
        return t;
    }
    let cand = [
        (yi, xi, (1.0 - fy) * (1.0 - fx)),
        (yi, xi + 1, (1.0 - fy) * fx),
        (yi + 1, xi, fy * (1.0 - fx)),
        (yi + 1, xi + 1, fy * fx),
    ];
    for (yy, xx, w) in cand {
        if w == 0.0 || yy < 0 || xx < 0 || yy >= sh_i || xx >= sw_i {
            continue;
        }
        t.idx[t.n] = yy as usize * sw + xx as usize;
        t.w[t.n] = w;
        t.n += 1;
    }
    t
}

#[inline(always)]
fn gather<const C: usize>(out: &mut [f64], src: &[f64], grid: &[[f64; 2]], sh: usize, sw: usize) {
    for (o, &[u, v]) in out.chunks_exact_mut(C).zip(grid) {
        let t = taps(u, v, sh, sw);
        for k in 0..t.n {
            let s = &src[t.idx[k] * C..(t.idx[k] + 1) * C];
            for ch in 0..C {
                o[ch] += t.w[k] * s[ch];
            }
        }
    }
}

#[inline(always)]
fn scatter<const C: usize>(out: &mut [f64], upstream: &[f64], grid: &[[f64; 2]], sh: usize, sw: usize) {
    for (g, &[u, v]) in upstream.chunks_exact(C).zip(grid) {
        let t = taps(u, v, sh, sw);
        for k in 0..t.n {
            let s = &mut out[t.idx[k] * C..(t.idx[k] + 1) * C];
            for ch in 0..C {
                s[ch] += t.w[k] * g[ch];
            }
        }
    }
}

fn gather_dyn(out: &mut [f64], src: &[f64], grid: &[[f64; 2]], sh: usize, sw: usize, c: usize) {
    for (o, &[u, v]) in out.chunks_exact_mut(c).zip(grid) {
        let t = taps(u, v, sh, sw);
        for k in 0..t.n {
            let s = &src[t.idx[k] * c..(t.idx[k] + 1) * c];
            for (a, b) in o.iter_mut().zip(s) {
                *a += t.w[k] * b;
            }
        }
    }
}

fn scatter_dyn(out: &mut [f64], upstream: &[f64], grid: &[[f64; 2]], sh: usize, sw: usize, c: usize) {
    for (g, &[u, v]) in upstream.chunks_exact(c).zip(grid) {
        let t = taps(u, v, sh, sw);
        for k in 0..t.n {
            let s = &mut out[t.idx[k] * c..(t.idx[k] + 1) * c];
            for (a, b) in s.iter_mut().zip(g) {
                *a += t.w[k] * b;
            }
        }
    }
}

/// Bilinear interpolation of `src` at every grid coordinate. Reads outside
/// the source contribute zero.
pub fn bilinear_sample(src: &ImageTensor, grid: &SamplingGrid) -> ImageTensor {
    let c = src.channels;
    let mut out = ImageTensor::zeros(grid.height, grid.width, c);
    let (sh, sw) = (src.height, src.width);
    match c {
        1 => gather::<1>(&mut out.data, &src.data, &grid.coords, sh, sw),
        3 => gather::<3>(&mut out.data, &src.data, &grid.coords, sh, sw),
        _ => gather_dyn(&mut out.data, &src.data, &grid.coords, sh, sw, c),
    }
    out
}

/// Vector-Jacobian product of [`bilinear_sample`] with respect to its source.
pub fn bilinear_sample_adjoint(
    upstream: &ImageTensor,
    grid: &SamplingGrid,
    src_height: usize,
    src_width: usize,
) -> Result<ImageTensor> {
    if upstream.height != grid.height || upstream.width != grid.width {
        return Err(Error::Shape(format!(
            "upstream {:?} does not match grid {}x{}",
            upstream.shape(),
            grid.height,
            grid.width
        )));
    }
    let c = upstream.channels;
    let mut out = ImageTensor::zeros(src_height, src_width, c);
    let (sh, sw) = (src_height, src_width);
    match c {
        1 => scatter::<1>(&mut out.data, &upstream.data, &grid.coords, sh, sw),
        3 => scatter::<3>(&mut out.data, &upstream.data, &grid.coords, sh, sw),
        _ => scatter_dyn(&mut out.data, &upstream.data, &grid.coords, sh, sw, c),
    }
    Ok(out)
}

/// Checked wrapper used where the output shape is fixed by the caller.
pub fn bilinear_sample_into(
    src: &ImageTensor,
    grid: &SamplingGrid,
    out_height: usize,
    out_width: usize,
) -> Result<ImageTensor> {
    if grid.height != out_height || grid.width != out_width {
        return Err(Error::Shape(format!(
            "grid {}x{} does not match output {out_height}x{out_width}",
            grid.height, grid.width
        )));
    }
    Ok(bilinear_sample(src, grid))
}

/// Bilinear resize with pixel-centre alignment.
pub fn resize_bilinear(src: &ImageTensor, height: usize, width: usize) -> ImageTensor {
    let sy = src.height as f64 / height as f64;
    let sx = src.width as f64 / width as f64;
    let max_u = src.width.saturating_sub(1) as f64;
    let max_v = src.height.saturating_sub(1) as f64;
    let grid = SamplingGrid::from_fn(height, width, |y, x| {
        [
            ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_u),
            ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_v),
        ]
    });
    bilinear_sample(src, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, c: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, c, |y, x, ch| ((y * 7 + x * 3 + ch) % 11) as f64 / 10.0)
    }

    #[test]
    fn data_length_is_checked() {
        assert!(ImageTensor::new(2, 2, 3, vec![0.0; 11]).is_err());
        assert!(ImageTensor::new(2, 2, 3, vec![0.0; 12]).is_ok());
    }

    #[test]
    fn identity_grid_is_exact() {
        let img = ramp(5, 7, 3);
        let out = bilinear_sample(&img, &SamplingGrid::identity(5, 7));
        assert_eq!(out, img);
    }

    #[test]
    fn half_pixel_shift_interpolates_midpoint() {
        let img = ImageTensor::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        let grid = SamplingGrid::new(1, 1, vec![[0.5, 0.0]]).unwrap();
        let out = bilinear_sample(&img, &grid);
        assert_eq!(out.data(), &[0.5]);
    }

    #[test]
    fn out_of_bounds_reads_are_zero() {
        let img = ImageTensor::filled(2, 2, 1, 1.0);
        let grid = SamplingGrid::new(1, 3, vec![[-5.0, 0.0], [1.5, 0.0], [0.0, -0.5]]).unwrap();
        let out = bilinear_sample(&img, &grid);
        assert_eq!(out.data(), &[0.0, 0.5, 0.5]);
    }

    #[test]
    fn grid_shape_mismatch_is_an_error() {
        assert!(SamplingGrid::new(2, 2, vec![[0.0, 0.0]; 3]).is_err());
        let img = ramp(3, 3, 1);
        let grid = SamplingGrid::identity(3, 3);
        assert!(bilinear_sample_into(&img, &grid, 3, 4).is_err());
        let up = ImageTensor::zeros(2, 3, 1);
        assert!(bilinear_sample_adjoint(&up, &grid, 3, 3).is_err());
    }

    #[test]
    fn sum_gradient_under_identity_is_all_ones() {
        // Finite-difference oracle on sum(bilinear_sample(src)), step 1e-5.
        let img = ramp(4, 5, 2);
        let grid = SamplingGrid::identity(4, 5);
        let ones = ImageTensor::filled(4, 5, 2, 1.0);
        let adj = bilinear_sample_adjoint(&ones, &grid, 4, 5).unwrap();
        let h = 1e-5;
        for i in 0..img.len() {
            let mut p = img.clone();
            p.data_mut()[i] += h;
            let mut m = img.clone();
            m.data_mut()[i] -= h;
            let fd = (bilinear_sample(&p, &grid).data().iter().sum::<f64>()
                - bilinear_sample(&m, &grid).data().iter().sum::<f64>())
                / (2.0 * h);
            assert!((fd - 1.0).abs() < 1e-8, "fd {fd}");
            assert_eq!(adj.data()[i], 1.0);
        }
    }

    #[test]
    fn adjoint_matches_inner_product_identity() {
        // <A x, y> = <x, A^T y> for a fractional grid.
        let src = ramp(6, 6, 3);
        let grid = SamplingGrid::from_fn(5, 4, |y, x| [x as f64 * 1.3 - 0.4, y as f64 * 0.9 + 0.7]);
        let up = ImageTensor::from_fn(5, 4, 3, |y, x, c| ((y + 2 * x + c) % 5) as f64 - 2.0);
        let ax = bilinear_sample(&src, &grid);
        let aty = bilinear_sample_adjoint(&up, &grid, 6, 6).unwrap();
        let lhs: f64 = ax.data().iter().zip(up.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = src.data().iter().zip(aty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn resize_preserves_constant_images() {
        let img = ImageTensor::filled(10, 20, 3, 0.25);
        let out = resize_bilinear(&img, 7, 13);
        assert!(out.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
