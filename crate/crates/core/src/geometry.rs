//! Axis-aligned box arithmetic in continuous corner form.
//!
//! Widths are `x2 - x1` (no `+1` pixel convention). Degenerate results of
//! clipping are reported as `None` rather than as zero-area boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Axis-aligned box `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox<T> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Scalar> BBox<T> {
    pub const fn new(x1: T, y1: T, x2: T, y2: T) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Builds a box and checks that it has strictly positive width and height.
    pub fn try_new(x1: T, y1: T, x2: T, y2: T) -> Result<Self> {
        let b = Self::new(x1, y1, x2, y2);
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::validation(format!("degenerate box {b:?}")))
        }
    }

    /// From COCO `[x, y, w, h]`.
    pub fn from_xywh(x: T, y: T, w: T, h: T) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [T; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }

    #[inline]
    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> T {
        let zero = T::zero();
        self.width().max_of(zero) * self.height().max_of(zero)
    }

    #[inline]
    pub fn is_valid(&self) -> bool {
        self.x2 > self.x1 && self.y2 > self.y1
    }

    /// Area of the overlap; zero when disjoint or touching.
    #[inline]
    pub fn intersection_area(&self, other: &Self) -> T {
        let zero = T::zero();
        let w = self.x2.min_of(other.x2) - self.x1.max_of(other.x1);
        let h = self.y2.min_of(other.y2) - self.y1.max_of(other.y1);
        w.max_of(zero) * h.max_of(zero)
    }

    /// `true` if `other` lies inside `self` (boundaries inclusive).
    pub fn contains(&self, other: &Self) -> bool {
        other.x1 >= self.x1 && other.y1 >= self.y1 && other.x2 <= self.x2 && other.y2 <= self.y2
    }

    pub fn map<U>(self, f: impl Fn(T) -> U) -> BBox<U> {
        BBox {
            x1: f(self.x1),
            y1: f(self.y1),
            x2: f(self.x2),
            y2: f(self.y2),
        }
    }

    pub fn corners(&self) -> [T; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let inter = a.intersection_area(b);
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.area() + b.area() - inter;
    inter / union
}

/// Intersection of `b` with `canvas`, or `None` if it has no area.
pub fn clip<T: Scalar>(b: &BBox<T>, canvas: &BBox<T>) -> Option<BBox<T>> {
    let out = BBox::new(
        b.x1.max_of(canvas.x1),
        b.y1.max_of(canvas.y1),
        b.x2.min_of(canvas.x2),
        b.y2.min_of(canvas.y2),
    );
    out.is_valid().then_some(out)
}

/// Mirror a box about the vertical centre line of a canvas of the given width.
pub fn hflip_box<T: Scalar>(b: &BBox<T>, canvas_width: T) -> BBox<T> {
    BBox::new(canvas_width - b.x2, b.y1, canvas_width - b.x1, b.y2)
}

/// Axis-aligned scale followed by translation: `x' = x * scale_x + offset_x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap2D<T> {
    pub scale_x: T,
    pub scale_y: T,
    pub offset_x: T,
    pub offset_y: T,
}

impl<T: Scalar> AffineMap2D<T> {
    pub fn new(scale_x: T, scale_y: T, offset_x: T, offset_y: T) -> Result<Self> {
        if scale_x > T::zero() && scale_y > T::zero() {
            Ok(Self {
                scale_x,
                scale_y,
                offset_x,
                offset_y,
            })
        } else {
            Err(Error::validation("affine map scales must be positive"))
        }
    }

    pub fn identity() -> Self {
        Self {
            scale_x: T::one(),
            scale_y: T::one(),
            offset_x: T::zero(),
            offset_y: T::zero(),
        }
    }

    /// The unique map sending the corners of `src` onto the corners of `dst`.
    pub fn between(src: &BBox<T>, dst: &BBox<T>) -> Result<Self> {
        if !src.is_valid() || !dst.is_valid() {
            return Err(Error::validation("affine map between degenerate boxes"));
        }
        let scale_x = dst.width() / src.width();
        let scale_y = dst.height() / src.height();
        Self::new(
            scale_x,
            scale_y,
            dst.x1 - src.x1 * scale_x,
            dst.y1 - src.y1 * scale_y,
        )
    }

    #[inline]
    pub fn apply_x(&self, x: T) -> T {
        x * self.scale_x + self.offset_x
    }

    #[inline]
    pub fn apply_y(&self, y: T) -> T {
        y * self.scale_y + self.offset_y
    }

    /// `self` first, then `next`.
    pub fn then(&self, next: &Self) -> Self {
        Self {
            scale_x: self.scale_x * next.scale_x,
            scale_y: self.scale_y * next.scale_y,
            offset_x: self.offset_x * next.scale_x + next.offset_x,
            offset_y: self.offset_y * next.scale_y + next.offset_y,
        }
    }

    pub fn inverse(&self) -> Self {
        let sx = T::one() / self.scale_x;
        let sy = T::one() / self.scale_y;
        Self {
            scale_x: sx,
            scale_y: sy,
            offset_x: T::zero() - self.offset_x * sx,
            offset_y: T::zero() - self.offset_y * sy,
        }
    }
}

pub fn affine_map<T: Scalar>(b: &BBox<T>, m: &AffineMap2D<T>) -> BBox<T> {
    BBox::new(
        m.apply_x(b.x1),
        m.apply_y(b.y1),
        m.apply_x(b.x2),
        m.apply_y(b.y2),
    )
}

/// Shorter-edge target with a cap on the longer edge, e.g. `(800, 1333)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub shorter_target: u32,
    pub longer_cap: u32,
}

impl ScaleSpec {
    pub const DEFAULT: ScaleSpec = ScaleSpec {
        shorter_target: 800,
        longer_cap: 1333,
    };

    pub fn new(shorter_target: u32, longer_cap: u32) -> Result<Self> {
        if shorter_target == 0 || shorter_target > longer_cap {
            return Err(Error::validation(format!(
                "scale spec needs 0 < shorter ({shorter_target}) <= longer cap ({longer_cap})"
            )));
        }
        Ok(Self {
            shorter_target,
            longer_cap,
        })
    }
}

impl Default for ScaleSpec {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resized {
    pub scale: f64,
    pub width: u32,
    pub height: u32,
}

/// Aspect-preserving resize: the shorter edge reaches `shorter_target` unless
/// that would push the longer edge past `longer_cap`.
pub fn resize_for_scale(width: u32, height: u32, spec: ScaleSpec) -> Resized {
    let (w, h) = (width.max(1) as f64, height.max(1) as f64);
    let scale = (spec.shorter_target as f64 / w.min(h)).min(spec.longer_cap as f64 / w.max(h));
    // f64::round rounds half away from zero.
    let dim = |d: f64| ((d * scale).round() as u32).max(1);
    Resized {
        scale,
        width: dim(w),
        height: dim(h),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use num_rational::Ratio;
    use proptest::prelude::*;

    type B = BBox<f64>;

    /// Counts unit cells covered by each box on an integer grid.
    fn raster_iou(a: &BBox<i64>, b: &BBox<i64>) -> f64 {
        let (mut inter, mut uni) = (0u64, 0u64);
        let lo_x = a.x1.min(b.x1);
        let hi_x = a.x2.max(b.x2);
        let lo_y = a.y1.min(b.y1);
        let hi_y = a.y2.max(b.y2);
        for y in lo_y..hi_y {
            for x in lo_x..hi_x {
                let ina = x >= a.x1 && x < a.x2 && y >= a.y1 && y < a.y2;
                let inb = x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2;
                inter += (ina && inb) as u64;
                uni += (ina || inb) as u64;
            }
        }
        inter as f64 / uni as f64
    }

    #[test]
    fn iou_examples() {
        let b = B::new(3.0, 4.0, 17.5, 9.0);
        assert_eq!(iou(&b, &b), 1.0);
        assert_eq!(
            iou(&B::new(0., 0., 10., 10.), &B::new(20., 20., 30., 30.)),
            0.0
        );
        let v = iou(&B::new(0., 0., 10., 10.), &B::new(5., 5., 15., 15.));
        let oracle = raster_iou(&BBox::new(0, 0, 10, 10), &BBox::new(5, 5, 15, 15));
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 25.0 / 175.0, epsilon = 1e-12);
    }

    #[test]
    fn iou_exact_in_rationals() {
        let r = |v: i64| Ratio::from_integer(v);
        let a = BBox::new(r(0), r(0), r(10), r(10));
        let b = BBox::new(r(5), r(5), r(15), r(15));
        assert_eq!(iou(&a, &b), Ratio::new(1, 7));
    }

    #[test]
    fn iou_in_f32() {
        let a = BBox::<f32>::new(0., 0., 10., 10.);
        let b = BBox::<f32>::new(5., 5., 15., 15.);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-6);
    }

    #[test]
    fn clip_examples() {
        let b = B::new(1., 2., 3., 4.);
        assert_eq!(clip(&b, &b), Some(b));
        assert_eq!(
            clip(&B::new(-5., -5., 5., 5.), &B::new(0., 0., 100., 100.)),
            Some(B::new(0., 0., 5., 5.))
        );
        assert_eq!(
            clip(&B::new(0., 0., 5., 5.), &B::new(10., 10., 20., 20.)),
            None
        );
        // touching edge has zero width
        assert_eq!(
            clip(&B::new(0., 0., 10., 5.), &B::new(10., 0., 20., 20.)),
            None
        );
    }

    #[test]
    fn affine_examples() {
        let b = B::new(3., 4., 5., 6.);
        assert_eq!(affine_map(&b, &AffineMap2D::identity()), b);
        let m = AffineMap2D::new(0.5, 2.0 / 3.0, 0.0, 0.0).unwrap();
        let out = affine_map(&B::new(0., 0., 800., 600.), &m);
        assert_abs_diff_eq!(out.x2, 400.0, epsilon = 1e-9);
        assert_abs_diff_eq!(out.y2, 400.0, epsilon = 1e-9);
        assert_eq!(out.x1, 0.0);
        let t = AffineMap2D::new(1.0, 1.0, 100.0, 0.0).unwrap();
        assert_eq!(
            affine_map(&B::new(10., 10., 20., 20.), &t),
            B::new(110., 10., 120., 20.)
        );
        assert!(AffineMap2D::new(-1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn affine_between_hits_corners() {
        let src = B::new(10., 20., 110., 70.);
        let dst = B::new(400., 0., 800., 300.);
        let m = AffineMap2D::between(&src, &dst).unwrap();
        let out = affine_map(&src, &m);
        for (a, b) in out.corners().iter().zip(dst.corners()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn resize_examples() {
        let r = resize_for_scale(640, 480, ScaleSpec::DEFAULT);
        assert_abs_diff_eq!(r.scale, 800.0 / 480.0, epsilon = 1e-12);
        assert_eq!((r.width, r.height), (1067, 800));
        let r = resize_for_scale(2000, 500, ScaleSpec::DEFAULT);
        assert_abs_diff_eq!(r.scale, 0.6665, epsilon = 1e-12);
        assert_eq!((r.width, r.height), (1333, 333));
        let r = resize_for_scale(800, 800, ScaleSpec::DEFAULT);
        assert_eq!(r.scale, 1.0);
        assert_eq!((r.width, r.height), (800, 800));
    }

    #[test]
    fn resize_clamps_to_one_pixel() {
        let r = resize_for_scale(10_000, 1, ScaleSpec::new(1, 2).unwrap());
        assert_eq!(r.height, 1);
    }

    #[test]
    fn scale_spec_validation() {
        assert!(ScaleSpec::new(0, 10).is_err());
        assert!(ScaleSpec::new(11, 10).is_err());
        assert!(ScaleSpec::new(10, 10).is_ok());
    }

    #[test]
    fn hflip_examples() {
        assert_eq!(
            hflip_box(&B::new(10., 0., 20., 10.), 100.0),
            B::new(80., 0., 90., 10.)
        );
        let c = B::new(40., 0., 60., 10.);
        assert_eq!(hflip_box(&c, 100.0), c);
    }

    #[test]
    fn xywh_conversion() {
        let b = B::from_xywh(10., 10., 20., 20.);
        assert_eq!(b, B::new(10., 10., 30., 30.));
        assert_eq!(b.to_xywh(), [10., 10., 20., 20.]);
    }

    fn int_box() -> impl Strategy<Value = BBox<i64>> {
        (0i64..48, 0i64..48, 1i64..=16, 1i64..=16)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
    }

    fn float_box() -> impl Strategy<Value = B> {
        (-50.0f64..50.0, -50.0f64..50.0, 0.1f64..60.0, 0.1f64..60.0)
            .prop_map(|(x, y, w, h)| B::new(x, y, x + w, y + h))
    }

    fn pos_map() -> impl Strategy<Value = AffineMap2D<f64>> {
        (0.1f64..4.0, 0.1f64..4.0, -100.0f64..100.0, -100.0f64..100.0)
            .prop_map(|(a, b, c, d)| AffineMap2D::new(a, b, c, d).unwrap())
    }

    proptest! {
        #[test]
        fn iou_matches_raster(a in int_box(), b in int_box()) {
            let fa = a.map(|v| v as f64);
            let fb = b.map(|v| v as f64);
            prop_assert!((iou(&fa, &fb) - raster_iou(&a, &b)).abs() <= 1e-9);
        }

        #[test]
        fn iou_symmetric_and_bounded(a in float_box(), b in float_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            if ab == 1.0 { prop_assert_eq!(a, b); }
        }

        #[test]
        fn clip_idempotent_and_contained(b in float_box(), c in float_box()) {
            if let Some(k) = clip(&b, &c) {
                prop_assert!(c.contains(&k));
                prop_assert_eq!(clip(&k, &c), Some(k));
            }
        }

        #[test]
        fn affine_composes(b in float_box(), m1 in pos_map(), m2 in pos_map()) {
            let two_step = affine_map(&affine_map(&b, &m1), &m2);
            let fused = affine_map(&b, &m1.then(&m2));
            prop_assert!(fused.is_valid());
            for (x, y) in two_step.corners().iter().zip(fused.corners()) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn hflip_involution(x in 0.0f64..50.0, w in 0.5f64..50.0, y in 0.0f64..10.0) {
            let b = B::new(x, y, x + w, y + 5.0);
            let back = hflip_box(&hflip_box(&b, 100.0), 100.0);
            for (p, q) in back.corners().iter().zip(b.corners()) {
                prop_assert!((p - q).abs() <= 1e-12);
            }
            // exact on the quarter-pixel grid
            let g = B::new((x * 4.0).round() / 4.0, y, (x * 4.0).round() / 4.0 + 2.25, y + 5.0);
            prop_assert_eq!(hflip_box(&hflip_box(&g, 100.0), 100.0), g);
        }

        #[test]
        fn resize_respects_caps(w in 1u32..5000, h in 1u32..5000, s in 1u32..1400, extra in 0u32..1000) {
            let spec = ScaleSpec::new(s, s + extra).unwrap();
            let r = resize_for_scale(w, h, spec);
            prop_assert!(r.width.max(r.height) <= spec.longer_cap + 1);
            prop_assert!(r.width.min(r.height) <= spec.shorter_target + 1);
        }
    }
}
