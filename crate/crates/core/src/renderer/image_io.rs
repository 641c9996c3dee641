use std::path::Path;

use image::imageops::FilterType;

use super::RenderError;

pub(crate) fn encode_png(img: &image::RgbImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    buf.into_inner()
}

/// Loads a PNG/JPEG, centre-crops it to the target aspect ratio and resizes
/// it to `width × height`. Returns row-major RGB floats in `[0, 1]`.
pub fn load_background(path: &Path, width: u32, height: u32) -> Result<Vec<f32>, RenderError> {
    let img = image::open(path)
        .map_err(|e| RenderError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (iw, ih) = img.dimensions();
    let target_aspect = width as f64 / height as f64;
    let (cw, ch) = if iw as f64 / ih as f64 > target_aspect {
        (((ih as f64) * target_aspect).round().max(1.0) as u32, ih)
    } else {
        (iw, ((iw as f64) / target_aspect).round().max(1.0) as u32)
    };
    let cropped = image::imageops::crop_imm(&img, (iw - cw) / 2, (ih - ch) / 2, cw, ch).to_image();
    let resized = image::imageops::resize(&cropped, width, height, FilterType::Triangle);
    Ok(resized.as_raw().iter().map(|&b| b as f32 / 255.0).collect())
}
