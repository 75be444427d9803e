//! The eight 8x8 class glyphs.

pub const GLYPH_SIZE: usize = 8;
pub const GLYPH_COUNT: usize = 8;

type Glyph = [[bool; GLYPH_SIZE]; GLYPH_SIZE];

/// Glyph for class `class` (`0..GLYPH_COUNT`): cross, square, disk,
/// horizontal stripes, vertical stripes, checker, ring, triangle.
pub fn glyph(class: usize) -> Glyph {
    let mut g = [[false; GLYPH_SIZE]; GLYPH_SIZE];
    for (y, row) in g.iter_mut().enumerate() {
        for (x, px) in row.iter_mut().enumerate() {
            // centred coordinates, doubled so the centre is (0, 0)
            let cy = 2 * y as i32 - 7;
            let cx = 2 * x as i32 - 7;
            let r2 = cx * cx + cy * cy;
            *px = match class {
                0 => y == 3 || y == 4 || x == 3 || x == 4,
                1 => y == 0 || y == 7 || x == 0 || x == 7,
                2 => r2 <= 49,
                3 => y % 2 == 0,
                4 => x % 2 == 0,
                5 => (x / 2 + y / 2) % 2 == 0,
                6 => (25..=64).contains(&r2),
                7 => x >= 3usize.saturating_sub(y / 2) && x <= 4 + y / 2,
                _ => panic!("no glyph for class {class}"),
            };
        }
    }
    g
}
