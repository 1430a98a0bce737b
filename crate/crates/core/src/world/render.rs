use std::f64::consts::TAU;

use crate::bbox::BBox;
use crate::graph::{progress, ActionGraph, ROTATE};
use crate::tensor::Tensor;

use super::semantics::containment;
use super::{Shape, WorldObject};

pub const BACKGROUND: [u8; 3] = [128, 128, 128];

/// An 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Frame {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Option<Self> {
        (data.len() == width * height * 3).then_some(Frame {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Pixel values scaled to `[0, 1]`, shape `[H, W, 3]`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.data.iter().map(|&v| v as f64 / 255.0).collect();
        Tensor::new(&[self.height, self.width, 3], data).expect("frame dimensions")
    }

    /// Inverse of [`Frame::to_tensor`]; values are clamped and rounded.
    pub fn from_tensor(t: &Tensor) -> Option<Self> {
        match *t.shape() {
            [h, w, 3] => {
                let data = t
                    .data()
                    .iter()
                    .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                    .collect();
                Frame::from_raw(w, h, data)
            }
            _ => None,
        }
    }

    /// Binary PPM (`P6`) encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self, String> {
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let begin = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if begin == pos {
                return Err("truncated PPM header".into());
            }
            fields.push(String::from_utf8_lossy(&bytes[begin..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(format!("expected P6 magic, found `{}`", fields[0]));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| format!("bad PPM header field `{s}`"))
        };
        let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if max != 255 {
            return Err(format!("only 8-bit PPM is supported, maxval {max}"));
        }
        let body = &bytes[(pos + 1).min(bytes.len())..];
        if body.len() != w * h * 3 {
            return Err(format!(
                "expected {} pixel bytes, found {}",
                w * h * 3,
                body.len()
            ));
        }
        Ok(Frame {
            width: w,
            height: h,
            data: body.to_vec(),
        })
    }
}

/// Render-only state of each object at one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderState {
    /// Spoke angle in radians, for objects that rotate at some point.
    pub spoke: Vec<Option<f64>>,
    /// Objects inside a cone are not drawn.
    pub hidden: Vec<bool>,
}

impl RenderState {
    pub fn plain(n: usize) -> Self {
        RenderState {
            spoke: vec![None; n],
            hidden: vec![false; n],
        }
    }
}

/// Spoke angles and visibility for every frame of `graph`.
pub fn render_states(graph: &ActionGraph) -> Vec<RenderState> {
    let n = graph.num_objects();
    let hidden_from: Vec<Option<usize>> = (0..n)
        .map(|i| containment(graph, i).map(|e| e.end))
        .collect();
    (0..graph.length())
        .map(|t| {
            let mut s = RenderState::plain(n);
            for e in graph
                .edges()
                .iter()
                .filter(|e| graph.action_name(e) == ROTATE)
            {
                let a = s.spoke[e.subject].get_or_insert(0.0);
                *a += TAU * progress(e, t);
            }
            for (i, from) in hidden_from.iter().enumerate() {
                s.hidden[i] = from.is_some_and(|f| t >= f);
            }
            s
        })
        .collect()
}

fn covers(shape: Shape, b: BBox, u: f64, v: f64) -> bool {
    if u < b.x0() || u >= b.x1() || v < b.y0() || v >= b.y1() {
        return false;
    }
    let a = (u - b.x0()) / b.w;
    let d = (v - b.y0()) / b.h;
    match shape {
        Shape::Square => true,
        Shape::Circle => {
            let (p, q) = (2.0 * a - 1.0, 2.0 * d - 1.0);
            p * p + q * q <= 1.0
        }
        Shape::Triangle => (a - 0.5).abs() <= 0.5 * d,
        Shape::Cone => (a - 0.5).abs() <= 0.5 * (0.3 + 0.7 * d),
    }
}

/// Draws `layout` over a gray background with the painter's algorithm
/// (lower depth first). Pixel `(px, py)` samples the scene at its center.
pub fn rasterize(
    layout: &[BBox],
    objects: &[WorldObject],
    state: &RenderState,
    width: usize,
    height: usize,
) -> Frame {
    let mut frame = Frame::filled(width, height, BACKGROUND);
    let mut order: Vec<usize> = (0..layout.len().min(objects.len())).collect();
    order.sort_by_key(|&i| (objects[i].depth, i));
    for i in order {
        if state.hidden.get(i).copied().unwrap_or(false) {
            continue;
        }
        let (b, o) = (layout[i], objects[i]);
        let rgb = o.rgb();
        let dark = rgb.map(|c| c / 2);
        let spoke = state.spoke.get(i).copied().flatten().map(|angle| {
            let len = 0.9 * b.w.min(b.h) / 2.0;
            (angle.cos() * len, -angle.sin() * len)
        });
        let px0 = ((b.x0() * width as f64).floor().max(0.0)) as usize;
        let px1 = ((b.x1() * width as f64).ceil() as usize).min(width);
        let py0 = ((b.y0() * height as f64).floor().max(0.0)) as usize;
        let py1 = ((b.y1() * height as f64).ceil() as usize).min(height);
        for py in py0..py1 {
            let v = (py as f64 + 0.5) / height as f64;
            for px in px0..px1 {
                let u = (px as f64 + 0.5) / width as f64;
                if !covers(o.shape, b, u, v) {
                    continue;
                }
                let on_spoke = spoke.is_some_and(|(dx, dy)| {
                    let (qx, qy) = ((u - b.x) * width as f64, (v - b.y) * height as f64);
                    let (sx, sy) = (dx * width as f64, dy * height as f64);
                    let s = ((qx * sx + qy * sy) / (sx * sx + sy * sy)).clamp(0.0, 1.0);
                    (qx - s * sx).hypot(qy - s * sy) <= 0.75
                });
                frame.set_pixel(px, py, if on_spoke { dark } else { rgb });
            }
        }
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Size;

    #[test]
    fn ppm_round_trip() {
        let mut f = Frame::filled(3, 2, [1, 2, 3]);
        f.set_pixel(2, 1, [255, 0, 10]);
        assert_eq!(Frame::from_ppm(&f.to_ppm()).unwrap(), f);
        assert!(Frame::from_ppm(b"P5\n1 1\n255\n\0").is_err());
        assert!(Frame::from_ppm(b"P6\n2 2\n255\n\0\0\0").is_err());
    }

    #[test]
    fn spoke_darkens_some_pixels() {
        let o = WorldObject {
            shape: Shape::Circle,
            color: 0,
            size: Size::Large,
            depth: 0,
        };
        let b = [BBox::new(0.5, 0.5, 0.24, 0.24)];
        let mut s = RenderState::plain(1);
        let plain = rasterize(&b, &[o], &s, 64, 64);
        s.spoke[0] = Some(0.0);
        let spun = rasterize(&b, &[o], &s, 64, 64);
        assert_ne!(plain, spun);
        assert_eq!(spun.pixel(36, 32), o.rgb().map(|c| c / 2));
        assert_eq!(spun.pixel(32, 26), o.rgb());
    }
}
