//! Heat-map rendering of exported grids, with the value range annotated in
//! the image itself.

use image::{Rgb, RgbImage};

pub struct GridData {
    pub side: usize,
    /// Row-major, `j * side + i`, `j = 0` at the bottom.
    pub values: Vec<f64>,
}

/// Parse the `x,y,g,h` grid CSV, extracting the given column onto a square
/// corner lattice. Tolerates any row order by reconstructing indices from
/// the coordinates.
pub fn parse_grid_csv(text: &str, column: usize) -> Result<GridData, String> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if !line.starts_with("x,") {
                return Err("missing x,y,... header".into());
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() <= column {
            return Err(format!("line {} has {} fields", lineno + 1, fields.len()));
        }
        let parse = |s: &str| -> Result<f64, String> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| format!("line {}: {e}", lineno + 1))
        };
        rows.push((parse(fields[0])?, parse(fields[1])?, parse(fields[column])?));
    }
    let count = rows.len();
    let side = (count as f64).sqrt().round() as usize;
    if side * side != count || side < 2 {
        return Err(format!("expected a square lattice, got {count} rows"));
    }
    let mut values = vec![f64::NAN; count];
    for (x, y, v) in rows {
        let i = (x * (side - 1) as f64).round() as usize;
        let j = (y * (side - 1) as f64).round() as usize;
        if i >= side || j >= side {
            return Err(format!("coordinate ({x}, {y}) is outside the unit square"));
        }
        values[j * side + i] = v;
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err("grid has missing lattice points".into());
    }
    Ok(GridData { side, values })
}

/// Render with a perceptual color ramp on a linear (or log) scale between
/// the data minimum and maximum, annotated at the bottom of the image.
pub fn heatmap(grid: &GridData, log_scale: bool) -> Result<RgbImage, String> {
    let side = grid.side;
    let lo = grid.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid
        .values
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err("grid contains non-finite values".into());
    }
    let map = |v: f64| -> f64 {
        if hi == lo {
            return 0.5;
        }
        if log_scale {
            let floor = (hi - lo) * 1e-6;
            ((v - lo + floor).ln() - floor.ln()) / ((hi - lo + floor).ln() - floor.ln())
        } else {
            (v - lo) / (hi - lo)
        }
    };
    let scale = (600 / side).max(1) as u32;
    let text_band = 12u32;
    let width = side as u32 * scale;
    let height = side as u32 * scale + text_band;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    for j in 0..side {
        for i in 0..side {
            let color = ramp(map(grid.values[j * side + i]));
            // j = 0 sits at the bottom of the picture.
            let py0 = (side - 1 - j) as u32 * scale;
            for dy in 0..scale {
                for dx in 0..scale {
                    img.put_pixel(i as u32 * scale + dx, py0 + dy, color);
                }
            }
        }
    }
    let label = format!("min={lo:.6e} max={hi:.6e}");
    draw_text(&mut img, 2, side as u32 * scale + 2, &label);
    Ok(img)
}

fn ramp(t: f64) -> Rgb<u8> {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.00, [68.0, 1.0, 84.0]),
        (0.25, [59.0, 82.0, 139.0]),
        (0.50, [33.0, 145.0, 140.0]),
        (0.75, [94.0, 201.0, 98.0]),
        (1.00, [253.0, 231.0, 37.0]),
    ];
    let t = t.clamp(0.0, 1.0);
    let mut rgb = STOPS[4].1;
    for w in STOPS.windows(2) {
        let ((t0, c0), (t1, c1)) = (w[0], w[1]);
        if t <= t1 {
            let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
            rgb = [
                c0[0] + f * (c1[0] - c0[0]),
                c0[1] + f * (c1[1] - c0[1]),
                c0[2] + f * (c1[2] - c0[2]),
            ];
            break;
        }
    }
    Rgb([rgb[0] as u8, rgb[1] as u8, rgb[2] as u8])
}

/// 5x7 bitmap glyphs for the annotation line; each byte is one row, low
/// five bits used, bit 4 leftmost.
fn glyph(c: char) -> [u8; 7] {
    match c {
        '0' => [0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e],
        '1' => [0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e],
        '2' => [0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f],
        '3' => [0x1e, 0x01, 0x01, 0x0e, 0x01, 0x01, 0x1e],
        '4' => [0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02],
        '5' => [0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e],
        '6' => [0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e],
        '7' => [0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e],
        '9' => [0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c],
        '-' => [0x00, 0x00, 0x00, 0x0e, 0x00, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00],
        'e' => [0x00, 0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e],
        'm' => [0x00, 0x00, 0x1a, 0x15, 0x15, 0x15, 0x15],
        'i' => [0x04, 0x00, 0x0c, 0x04, 0x04, 0x04, 0x0e],
        'n' => [0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11],
        'a' => [0x00, 0x00, 0x0e, 0x01, 0x0f, 0x11, 0x0f],
        'x' => [0x00, 0x00, 0x11, 0x0a, 0x04, 0x0a, 0x11],
        '=' => [0x00, 0x00, 0x1f, 0x00, 0x1f, 0x00, 0x00],
        _ => [0; 7],
    }
}

fn draw_text(img: &mut RgbImage, x0: u32, y0: u32, text: &str) {
    let dark = Rgb([20, 20, 20]);
    let mut x = x0;
    for c in text.chars() {
        let rows = glyph(c);
        for (dy, row) in rows.iter().enumerate() {
            for dx in 0..5u32 {
                if row & (1 << (4 - dx)) != 0 {
                    let (px, py) = (x + dx, y0 + dy as u32);
                    if px < img.width() && py < img.height() {
                        img.put_pixel(px, py, dark);
                    }
                }
            }
        }
        x += 6;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_renders_a_small_grid() {
        let mut csv = String::from("x,y,g,h\n");
        for j in 0..3 {
            for i in 0..3 {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    i as f64 / 2.0,
                    j as f64 / 2.0,
                    (i + j) as f64,
                    0.0
                ));
            }
        }
        let grid = parse_grid_csv(&csv, 2).unwrap();
        assert_eq!(grid.side, 3);
        assert_eq!(grid.values[0], 0.0);
        assert_eq!(grid.values[8], 4.0);
        let img = heatmap(&grid, false).unwrap();
        assert!(img.width() >= 3);
    }

    #[test]
    fn rejects_non_square_data() {
        let csv = "x,y,g,h\n0,0,1,0\n1,0,1,0\n";
        assert!(parse_grid_csv(csv, 2).is_err());
    }
}
