use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const PALETTE_LEVELS: usize = 8;
pub const PALETTE_ROWS: usize = 16;
pub const PALETTE_COLS: usize = 32;
/// Edge length of the square each anchor is replicated over when printed.
pub const BLOCK_SIZE: usize = 40;

/// 512 colour anchors laid out as 16 rows of 32.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorPalette {
    pub anchors: Vec<[f64; 3]>,
}

impl ColorPalette {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Anchors as a 16x32 three-channel image, one pixel per anchor.
    pub fn as_grid(&self) -> Result<ImageTensor> {
        if self.anchors.len() != PALETTE_ROWS * PALETTE_COLS {
            return Err(Error::Shape(format!(
                "palette has {} anchors, expected {}",
                self.anchors.len(),
                PALETTE_ROWS * PALETTE_COLS
            )));
        }
        Ok(ImageTensor::from_fn(PALETTE_ROWS, PALETTE_COLS, 3, |y, x, c| {
            self.anchors[y * PALETTE_COLS + x][c]
        }))
    }
}

/// The uniform 8x8x8 RGB grid; blue varies fastest, red slowest.
pub fn make_digital_palette() -> ColorPalette {
    let step = 1.0 / (PALETTE_LEVELS - 1) as f64;
    let mut anchors = Vec::with_capacity(PALETTE_LEVELS.pow(3));
    for r in 0..PALETTE_LEVELS {
        for g in 0..PALETTE_LEVELS {
            for b in 0..PALETTE_LEVELS {
                anchors.push([r as f64 * step, g as f64 * step, b as f64 * step]);
            }
        }
    }
    ColorPalette { anchors }
}

/// 640x1280 printable palette: every anchor fills a 40x40 block.
pub fn palette_image(palette: &ColorPalette) -> Result<ImageTensor> {
    let grid = palette.as_grid()?;
    Ok(ImageTensor::from_fn(
        PALETTE_ROWS * BLOCK_SIZE,
        PALETTE_COLS * BLOCK_SIZE,
        3,
        |y, x, c| grid.at(y / BLOCK_SIZE, x / BLOCK_SIZE, c),
    ))
}

/// Averages each cell of a 16x32 block grid back into an anchor.
pub fn extract_palette_from_photo(img: &ImageTensor) -> Result<ColorPalette> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!("palette photo has {} channels", img.channels())));
    }
    if !img.height().is_multiple_of(PALETTE_ROWS) || !img.width().is_multiple_of(PALETTE_COLS) || img.is_empty() {
        return Err(Error::Shape(format!(
            "{}x{} is not divisible into a {PALETTE_ROWS}x{PALETTE_COLS} block grid",
            img.height(),
            img.width()
        )));
    }
    let bh = img.height() / PALETTE_ROWS;
    let bw = img.width() / PALETTE_COLS;
    let n = (bh * bw) as f64;
    let mut anchors = Vec::with_capacity(PALETTE_ROWS * PALETTE_COLS);
    for row in 0..PALETTE_ROWS {
        for col in 0..PALETTE_COLS {
            let mut anchor = [0.0; 3];
            for (c, a) in anchor.iter_mut().enumerate() {
                // Shifted mean: exact for uniform blocks.
                let pivot = img.at(row * bh, col * bw, c);
                let mut dev = 0.0;
                for y in row * bh..(row + 1) * bh {
                    for x in col * bw..(col + 1) * bw {
                        dev += img.at(y, x, c) - pivot;
                    }
                }
                *a = pivot + dev / n;
            }
            anchors.push(anchor);
        }
    }
    Ok(ColorPalette { anchors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digital_palette_corners_and_size() {
        let p = make_digital_palette();
        assert_eq!(p.len(), 512);
        assert_eq!(p.anchors[0], [0.0, 0.0, 0.0]);
        assert_eq!(p.anchors[511], [1.0, 1.0, 1.0]);
        assert_eq!(p.anchors[1], [0.0, 0.0, 1.0 / 7.0]);
    }

    #[test]
    fn palette_image_layout() {
        let p = make_digital_palette();
        let img = palette_image(&p).unwrap();
        assert_eq!((img.height(), img.width()), (640, 1280));
        for y in 0..40 {
            for x in 0..40 {
                for c in 0..3 {
                    assert_eq!(img.at(y, x, c), p.anchors[0][c]);
                }
            }
        }
        // Anchor 33 sits in block row 1, column 1.
        assert_eq!(img.at(45, 45, 2), p.anchors[33][2]);
    }

    #[test]
    fn extraction_round_trip_is_exact() {
        let p = make_digital_palette();
        let back = extract_palette_from_photo(&palette_image(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn extraction_follows_uniform_offset() {
        let p = make_digital_palette();
        let shifted = palette_image(&p).unwrap().map(|v| (v + 0.1).min(1.0));
        let back = extract_palette_from_photo(&shifted).unwrap();
        for (a, b) in back.anchors.iter().zip(&p.anchors) {
            for c in 0..3 {
                assert_eq!(a[c], (b[c] + 0.1).min(1.0));
            }
        }
    }

    #[test]
    fn extraction_rejects_indivisible_images() {
        let img = ImageTensor::zeros(641, 1280, 3);
        assert!(matches!(extract_palette_from_photo(&img), Err(Error::Shape(_))));
    }
}
