//! Plain-text PGM density maps and PPM scatter plots for planar worlds.

use std::fmt::Write;

use softmix::{Condition, Schedule, ToyWorld, Vector};

use crate::error::{HarnessError, Result};

/// Pixel grid over `[x_min, x_max] × [y_min, y_max]`. Row 0 is the top (`y_max`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            width: 64,
            height: 64,
            x_min: -4.0,
            x_max: 4.0,
            y_min: -4.0,
            y_max: 4.0,
        }
    }
}

impl Grid {
    fn check(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !(self.x_min < self.x_max) || !(self.y_min < self.y_max) {
            return Err(HarnessError::Render(format!("degenerate grid {self:?}")));
        }
        Ok(())
    }

    /// Centre of pixel `(row, col)`.
    pub fn point(&self, row: usize, col: usize) -> (f64, f64) {
        let x = self.x_min + (col as f64 + 0.5) * (self.x_max - self.x_min) / self.width as f64;
        let y = self.y_max - (row as f64 + 0.5) * (self.y_max - self.y_min) / self.height as f64;
        (x, y)
    }

    /// Pixel containing `(x, y)`, if inside the bounds.
    pub fn pixel(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = (x - self.x_min) / (self.x_max - self.x_min);
        let fy = (self.y_max - y) / (self.y_max - self.y_min);
        if !(0.0..=1.0).contains(&fx) || !(0.0..=1.0).contains(&fy) {
            return None;
        }
        let col = ((fx * self.width as f64) as usize).min(self.width - 1);
        let row = ((fy * self.height as f64) as usize).min(self.height - 1);
        Some((row, col))
    }
}

fn require_planar(dim: usize) -> Result<()> {
    if dim != 2 {
        return Err(HarnessError::Render(format!("rendering needs d = 2, got d = {dim}")));
    }
    Ok(())
}

/// `p_t(x | c)` on the grid, scaled so the peak pixel is 255, as a P2 graymap.
pub fn render_density(world: &ToyWorld, s: &Schedule, c: &Condition, t: usize, grid: &Grid) -> Result<String> {
    require_planar(world.data_dim())?;
    grid.check()?;
    let mut logp = Vec::with_capacity(grid.width * grid.height);
    for row in 0..grid.height {
        for col in 0..grid.width {
            let (x, y) = grid.point(row, col);
            logp.push(world.log_density(s, &Vector::from_vec(vec![x, y]), t, c)?);
        }
    }
    let peak = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P2\n{} {}\n255\n", grid.width, grid.height);
    for row in logp.chunks(grid.width) {
        let line: Vec<String> = row
            .iter()
            .map(|l| ((l - peak).exp() * 255.0).round().to_string())
            .collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    Ok(out)
}

/// A set of points drawn in one colour.
pub struct Overlay<'a> {
    pub points: &'a [Vector],
    pub rgb: [u8; 3],
}

/// Neutral samples go to the red channel, edited ones to green.
pub const NEUTRAL: [u8; 3] = [255, 0, 0];
pub const EDITED: [u8; 3] = [0, 255, 0];

/// One-pixel markers on black, as a P3 pixmap. Overlapping overlays combine
/// by channel-wise max; points outside the bounds are dropped.
pub fn render_points(overlays: &[Overlay<'_>], grid: &Grid) -> Result<String> {
    grid.check()?;
    if overlays.iter().all(|o| o.points.is_empty()) {
        return Err(HarnessError::Render("no points to render".into()));
    }
    let mut pixels = vec![[0u8; 3]; grid.width * grid.height];
    for o in overlays {
        for p in o.points {
            require_planar(p.len())?;
            if let Some((row, col)) = grid.pixel(p[0], p[1]) {
                let px = &mut pixels[row * grid.width + col];
                for (ch, v) in px.iter_mut().zip(o.rgb) {
                    *ch = (*ch).max(v);
                }
            }
        }
    }
    let mut out = format!("P3\n{} {}\n255\n", grid.width, grid.height);
    for row in pixels.chunks(grid.width) {
        let line: Vec<String> = row.iter().map(|p| format!("{} {} {}", p[0], p[1], p[2])).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    Ok(out)
}
