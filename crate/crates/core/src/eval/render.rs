use image::{Rgb, RgbImage};

use super::infer::ChangeMap;
use crate::data::LabelMap;
use crate::error::{Error, Result};

pub const TRUE_POSITIVE: Rgb<u8> = Rgb([255, 255, 255]);
pub const TRUE_NEGATIVE: Rgb<u8> = Rgb([0, 0, 0]);
pub const FALSE_POSITIVE: Rgb<u8> = Rgb([0, 255, 0]);
pub const FALSE_NEGATIVE: Rgb<u8> = Rgb([255, 0, 255]);

/// Colors each pixel by its confusion outcome.
pub fn render_comparison(pred: &ChangeMap, label: &LabelMap) -> Result<RgbImage> {
    if (pred.height(), pred.width()) != (label.height(), label.width()) {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, label is {}x{}",
            pred.width(),
            pred.height(),
            label.width(),
            label.height()
        )));
    }
    let w = pred.width();
    Ok(RgbImage::from_fn(w as u32, pred.height() as u32, |x, y| {
        let i = y as usize * w + x as usize;
        match (pred.pred()[i] != 0, label.data()[i] != 0) {
            (true, true) => TRUE_POSITIVE,
            (false, false) => TRUE_NEGATIVE,
            (true, false) => FALSE_POSITIVE,
            (false, true) => FALSE_NEGATIVE,
        }
    }))
}
