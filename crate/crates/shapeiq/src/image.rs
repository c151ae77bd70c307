//! PNG export of canvases and question contact sheets.

use std::path::Path;

use shapeiq_core::geometry::{Canvas, CANVAS_SIZE};
use shapeiq_core::qgen::Record;

const N: usize = CANVAS_SIZE;
/// Space around each cell; the answer and prediction outlines live here.
const PAD: usize = 4;
/// Height of the probability bar under an option.
const BAR: usize = 6;
const GAP: usize = 16;
const SHEET_BG: [u8; 3] = [200, 200, 200];
const ANSWER: [u8; 3] = [0, 150, 0];
const WRONG: [u8; 3] = [210, 0, 0];
const BAR_FILL: [u8; 3] = [40, 90, 200];
const BAR_EMPTY: [u8; 3] = [235, 235, 235];

/// An 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, bg: [u8; 3]) -> Self {
        Self { width, height, rgb: bg.repeat(width * height) }
    }

    pub fn from_canvas(canvas: &Canvas, scale: usize) -> Self {
        let mut img = Self::new(N * scale, N * scale, [0; 3]);
        img.blit(0, 0, canvas, scale);
        img
    }

    pub fn put(&mut self, x: usize, y: usize, px: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = (y * self.width + x) * 3;
            self.rgb[i..i + 3].copy_from_slice(&px);
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Draws `canvas` with its top-left corner at `(x, y)`, each pixel as a
    /// `scale`×`scale` block.
    pub fn blit(&mut self, x: usize, y: usize, canvas: &Canvas, scale: usize) {
        for cy in 0..N * scale {
            for cx in 0..N * scale {
                self.put(x + cx, y + cy, canvas.pixel(cx / scale, cy / scale));
            }
        }
    }

    pub fn fill(&mut self, x: usize, y: usize, w: usize, h: usize, color: [u8; 3]) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, color);
            }
        }
    }

    /// A `t`-pixel frame just outside the `w`×`h` box at `(x, y)`.
    pub fn outline(&mut self, x: usize, y: usize, w: usize, h: usize, t: usize, color: [u8; 3]) {
        let (x0, y0) = (x.saturating_sub(t), y.saturating_sub(t));
        let (ow, oh) = (w + x - x0 + t, h + y - y0 + t);
        self.fill(x0, y0, ow, t, color);
        self.fill(x0, y + h, ow, t, color);
        self.fill(x0, y0, t, oh, color);
        self.fill(x + w, y0, t, oh, color);
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, png::EncodingError> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header()?;
            w.write_image_data(&self.rgb)?;
        }
        Ok(out)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, png::DecodingError> {
        let mut reader = png::Decoder::new(std::io::Cursor::new(bytes)).read_info()?;
        let mut buf = vec![0; reader.output_buffer_size().expect("buffer size")];
        let info = reader.next_frame(&mut buf)?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(png::DecodingError::LimitsExceeded);
        }
        buf.truncate(info.buffer_size());
        Ok(Self { width: info.width as usize, height: info.height as usize, rgb: buf })
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let bytes = self.encode_png()?;
        crate::write_atomic(path, |w| w.write_all(&bytes))?;
        Ok(())
    }
}

/// One question on a contact sheet, with optional model output.
#[derive(Debug, Clone)]
pub struct SheetRow {
    pub record: Record,
    /// Option probabilities, drawn as bars under the options.
    pub probabilities: Option<[f32; 4]>,
    /// Chosen option; outlined in red when wrong.
    pub choice: Option<usize>,
    /// Predicted next frame for open questions, drawn after the target.
    pub predicted: Option<Canvas>,
}

impl SheetRow {
    pub fn plain(record: Record) -> Self {
        Self { record, probabilities: None, choice: None, predicted: None }
    }
}

const PITCH: usize = N + 2 * PAD;
const ROW: usize = PITCH + BAR + PAD;

/// Left edges of the cells in a row: context frames, a gap, then options
/// (or target and prediction).
fn cell_x(slot: usize, context: usize) -> usize {
    PAD + slot * PITCH + if slot >= context { GAP } else { 0 }
}

/// One question per row. Multiple choice: three context slots, then four
/// options with the correct one outlined in green. Open: two context frames,
/// then the target and any prediction.
pub fn question_sheet(rows: &[SheetRow]) -> Image {
    let width = cell_x(7, 3) + PAD;
    let mut img = Image::new(width, rows.len().max(1) * ROW + PAD, SHEET_BG);
    for (r, row) in rows.iter().enumerate() {
        let y = PAD + r * ROW + PAD;
        match &row.record {
            Record::MultipleChoice(q) => {
                for (i, c) in q.context.iter().enumerate() {
                    img.blit(cell_x(i, 3), y, c, 1);
                }
                for (i, c) in q.options.iter().enumerate() {
                    let x = cell_x(3 + i, 3);
                    img.blit(x, y, c, 1);
                    if i == q.answer_index as usize {
                        img.outline(x, y, N, N, 2, ANSWER);
                    } else if row.choice == Some(i) {
                        img.outline(x, y, N, N, 2, WRONG);
                    }
                    if let Some(p) = row.probabilities {
                        let filled = (p[i].clamp(0.0, 1.0) * N as f32).round() as usize;
                        img.fill(x, y + N + PAD, N, BAR, BAR_EMPTY);
                        img.fill(x, y + N + PAD, filled, BAR, BAR_FILL);
                    }
                }
            }
            Record::Open(q) => {
                for (i, c) in q.context.iter().enumerate() {
                    img.blit(cell_x(i, 2), y, c, 1);
                }
                let x = cell_x(2, 2);
                img.blit(x, y, &q.target, 1);
                img.outline(x, y, N, N, 2, ANSWER);
                if let Some(p) = &row.predicted {
                    img.blit(cell_x(3, 2), y, p, 1);
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use shapeiq_core::geometry::{Rgb, WHITE};

    #[test]
    fn canvas_png_round_trips_bytes() {
        let mut c = Canvas::filled(WHITE);
        c.set_pixel(3, 5, [1, 2, 3]);
        c.set_pixel(63, 63, Rgb::new(0.5, 0.25, 1.0).to_bytes());
        let img = Image::from_canvas(&c, 1);
        let back = Image::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back.rgb, c.as_bytes());
        assert_eq!(back.pixel(63, 63), [128, 64, 255]);
    }

    #[test]
    fn scaled_blit_repeats_pixels() {
        let mut c = Canvas::filled(WHITE);
        c.set_pixel(1, 0, [9, 9, 9]);
        let img = Image::from_canvas(&c, 3);
        assert_eq!(img.width, 192);
        assert_eq!(img.pixel(3, 2), [9, 9, 9]);
        assert_eq!(img.pixel(5, 0), [9, 9, 9]);
        assert_eq!(img.pixel(6, 0), [255, 255, 255]);
    }

    #[test]
    fn outline_surrounds_the_box() {
        let mut img = Image::new(10, 10, [0; 3]);
        img.outline(3, 3, 4, 4, 1, [1, 1, 1]);
        assert_eq!(img.pixel(2, 2), [1, 1, 1]);
        assert_eq!(img.pixel(7, 7), [1, 1, 1]);
        assert_eq!(img.pixel(3, 3), [0; 3]);
        assert_eq!(img.pixel(1, 1), [0; 3]);
    }
}
