//! Overlay rendering: annotations as green crosses, detections in red.

use nucleo::image::Point;
use nucleo::{GrayImage, Region};

pub const GREEN: [u8; 3] = [0, 255, 0];
pub const RED: [u8; 3] = [255, 0, 0];
/// Half-length of a cross arm.
pub const CROSS_ARM: i64 = 6;
/// Radius of the ring drawn around a detected point.
pub const RING_RADIUS: i64 = 5;

/// RGB raster, row-major, three bytes per pixel.
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Canvas {
    pub fn from_gray(img: &GrayImage) -> Self {
        let rgb = img.pixels().iter().flat_map(|&v| [v, v, v]).collect();
        Self { width: img.width(), height: img.height(), rgb }
    }

    pub fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            let i = 3 * (y as usize * self.width + x as usize);
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    pub fn cross(&mut self, p: Point, c: [u8; 3]) {
        let (x, y) = (p.x as i64, p.y as i64);
        for d in -CROSS_ARM..=CROSS_ARM {
            self.put(x + d, y, c);
            self.put(x, y + d, c);
        }
    }

    pub fn ring(&mut self, p: Point, c: [u8; 3]) {
        let (x, y) = (p.x as i64, p.y as i64);
        let r2 = RING_RADIUS * RING_RADIUS;
        for dy in -RING_RADIUS..=RING_RADIUS {
            for dx in -RING_RADIUS..=RING_RADIUS {
                let d2 = dx * dx + dy * dy;
                if d2 <= r2 && d2 > (RING_RADIUS - 1) * (RING_RADIUS - 1) {
                    self.put(x + dx, y + dy, c);
                }
            }
        }
    }

    /// Paints the pixels of `region` that have a 4-neighbour outside it.
    pub fn contour(&mut self, region: &Region, c: [u8; 3]) {
        for &p in region.pixels() {
            let (x, y) = (p.x as i64, p.y as i64);
            let outside = |dx: i64, dy: i64| {
                let (nx, ny) = (x + dx, y + dy);
                nx < 0 || ny < 0 || !region.contains(Point::new(nx as u32, ny as u32))
            };
            if outside(1, 0) || outside(-1, 0) || outside(0, 1) || outside(0, -1) {
                self.put(x, y, c);
            }
        }
    }
}

/// What to draw for the detections of one frame.
pub enum Marks<'a> {
    None,
    Points(&'a [Point]),
    Regions(&'a [Region]),
}

pub fn render(img: &GrayImage, gt: &[Point], marks: Marks<'_>) -> Canvas {
    let mut c = Canvas::from_gray(img);
    match marks {
        Marks::None => {}
        Marks::Points(ps) => ps.iter().for_each(|&p| c.ring(p, RED)),
        Marks::Regions(rs) => rs.iter().for_each(|r| c.contour(r, RED)),
    }
    for &p in gt {
        c.cross(p, GREEN);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nothing_to_draw_keeps_pixels() {
        let img = GrayImage::new(3, 2, vec![0, 10, 20, 30, 40, 255]).unwrap();
        let c = render(&img, &[], Marks::Points(&[]));
        assert_eq!(c.rgb, vec![0, 0, 0, 10, 10, 10, 20, 20, 20, 30, 30, 30, 40, 40, 40, 255, 255, 255]);
    }

    #[test]
    fn cross_is_centred() {
        let img = GrayImage::filled(200, 200, 128);
        let c = render(&img, &[Point::new(100, 100)], Marks::None);
        let at = |x: usize, y: usize| &c.rgb[3 * (y * 200 + x)..3 * (y * 200 + x) + 3];
        assert_eq!(at(100, 100), GREEN);
        assert_eq!(at(100 - CROSS_ARM as usize, 100), GREEN);
        assert_eq!(at(100, 100 + CROSS_ARM as usize), GREEN);
        assert_eq!(at(101, 101), [128, 128, 128]);
        assert_eq!(at(100 + CROSS_ARM as usize + 1, 100), [128, 128, 128]);
    }

    #[test]
    fn contour_skips_interior() {
        let pixels: Vec<Point> = (0..5).flat_map(|y| (0..5).map(move |x| Point::new(x + 2, y + 2))).collect();
        let r = Region::from_pixels(pixels);
        let c = render(&GrayImage::filled(10, 10, 50), &[], Marks::Regions(std::slice::from_ref(&r)));
        let at = |x: usize, y: usize| [c.rgb[3 * (y * 10 + x)], c.rgb[3 * (y * 10 + x) + 1]];
        assert_eq!(at(2, 2), [255, 0]);
        assert_eq!(at(4, 4), [50, 50]);
        assert_eq!(at(6, 4), [255, 0]);
    }
}
