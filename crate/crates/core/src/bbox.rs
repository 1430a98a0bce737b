/// Axis-aligned box in normalized scene coordinates: `(x, y)` is the center,
/// `(w, h)` the full extents. `y` grows downwards, matching image rows.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BBox::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn center(self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn x0(self) -> f64 {
        self.x - self.w / 2.0
    }

    pub fn x1(self) -> f64 {
        self.x + self.w / 2.0
    }

    pub fn y0(self) -> f64 {
        self.y - self.h / 2.0
    }

    pub fn y1(self) -> f64 {
        self.y + self.h / 2.0
    }

    pub fn area(self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Each coordinate clamped to `[0, 1]`.
    pub fn clamped(self) -> Self {
        BBox::new(
            self.x.clamp(0.0, 1.0),
            self.y.clamp(0.0, 1.0),
            self.w.clamp(0.0, 1.0),
            self.h.clamp(0.0, 1.0),
        )
    }

    /// Whether the whole box lies inside the unit square.
    pub fn inside_unit(self) -> bool {
        self.x0() >= 0.0 && self.y0() >= 0.0 && self.x1() <= 1.0 && self.y1() <= 1.0
    }

    pub fn center_distance(self, other: BBox) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn iou(self, other: BBox) -> f64 {
        let iw = (self.x1().min(other.x1()) - self.x0().max(other.x0())).max(0.0);
        let ih = (self.y1().min(other.y1()) - self.y0().max(other.y0())).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_overlapping_unit_boxes() {
        let a = BBox::new(0.5, 0.5, 1.0, 1.0);
        let b = BBox::new(1.0, 0.5, 1.0, 1.0);
        assert!((a.iou(b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.iou(a), 1.0);
        assert_eq!(a.iou(BBox::new(3.0, 3.0, 1.0, 1.0)), 0.0);
    }
}
