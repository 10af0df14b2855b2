//! SVG export for planar diagrams.
//!
//! Polygonal diagrams are drawn from [`CellPolygon2D`] lists. Diagrams with
//! curved boundaries are drawn from a [`Raster`] sampled at pixel centres.

use std::fmt::Write;

use crate::geometry::{BoundingBox, CellPolygon2D, Result};
use crate::par::Exec;

const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bab0ac",
];

pub fn class_color(k: usize) -> &'static str {
    PALETTE[k % PALETTE.len()]
}

/// A labelled point drawn on top of a diagram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterPoint {
    pub pos: [f64; 2],
    pub class: usize,
}

struct Canvas {
    bbox: BoundingBox,
    width: f64,
    height: f64,
}

impl Canvas {
    fn new(bbox: BoundingBox, width: usize) -> Self {
        let width = width as f64;
        let height = width * bbox.height() / bbox.width();
        Self {
            bbox,
            width,
            height,
        }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        let x = (p[0] - self.bbox.min[0]) / self.bbox.width() * self.width;
        let y = (self.bbox.max[1] - p[1]) / self.bbox.height() * self.height;
        (x, y)
    }

    fn open(&self, out: &mut String) {
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.3} {h:.3}">"#,
            w = self.width,
            h = self.height
        );
    }

    fn scatter(&self, out: &mut String, points: &[ScatterPoint]) {
        if points.is_empty() {
            return;
        }
        out.push_str("<g class=\"scatter\" stroke=\"#222\" stroke-width=\"0.6\">\n");
        for p in points.iter().filter(|p| self.bbox.contains(&p.pos)) {
            let (x, y) = self.map(p.pos);
            let _ = writeln!(
                out,
                r#"<circle cx="{x:.3}" cy="{y:.3}" r="3" fill="{}"/>"#,
                class_color(p.class)
            );
        }
        out.push_str("</g>\n");
    }
}

/// One `<polygon>` per non-empty cell, coloured by cell index.
pub fn cells_svg(
    cells: &[CellPolygon2D],
    bbox: &BoundingBox,
    scatter: &[ScatterPoint],
    width: usize,
) -> String {
    let canvas = Canvas::new(*bbox, width);
    let mut out = String::new();
    canvas.open(&mut out);
    out.push_str("<g class=\"cells\" stroke=\"#333\" stroke-width=\"1\">\n");
    for c in cells.iter().filter(|c| !c.is_empty()) {
        let pts: Vec<String> = c
            .vertices
            .iter()
            .map(|v| {
                let (x, y) = canvas.map(*v);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polygon data-cell="{}" points="{}" fill="{}" fill-opacity="0.55"/>"#,
            c.cell_index,
            pts.join(" "),
            class_color(c.cell_index)
        );
    }
    out.push_str("</g>\n");
    canvas.scatter(&mut out, scatter);
    out.push_str("</svg>\n");
    out
}

/// Cell indices sampled on a regular grid, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub bbox: BoundingBox,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<usize>,
    /// Pixels drawn with a highlight overlay.
    pub highlight: Option<Vec<bool>>,
}

impl Raster {
    /// Evaluates `assign` at every pixel centre.
    pub fn sample<F>(
        bbox: BoundingBox,
        width: usize,
        height: usize,
        exec: Exec,
        assign: F,
    ) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<usize> + Sync + Send,
    {
        let probe = Self {
            bbox,
            width,
            height,
            cells: Vec::new(),
            highlight: None,
        };
        let cells = exec
            .map_range(width * height, |i| assign(&probe.pixel_center(i)))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cells, ..probe })
    }

    /// Marks pixels for which `mark` holds.
    pub fn with_highlight<F>(mut self, exec: Exec, mark: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<bool> + Sync + Send,
    {
        let mask = exec
            .map_range(self.cells.len(), |i| mark(&self.pixel_center(i)))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        self.highlight = Some(mask);
        Ok(self)
    }

    /// Feature-space coordinates of the centre of pixel `i` (row-major).
    pub fn pixel_center(&self, i: usize) -> [f64; 2] {
        let (row, col) = (i / self.width, i % self.width);
        let dx = self.bbox.width() / self.width as f64;
        let dy = self.bbox.height() / self.height as f64;
        [
            self.bbox.min[0] + (col as f64 + 0.5) * dx,
            self.bbox.max[1] - (row as f64 + 0.5) * dy,
        ]
    }

    pub fn highlighted_count(&self) -> usize {
        self.highlight
            .as_ref()
            .map_or(0, |m| m.iter().filter(|b| **b).count())
    }
}

/// Draws a raster as row runs of equal cell index, plus highlighted runs.
pub fn raster_svg(raster: &Raster, scatter: &[ScatterPoint], width: usize) -> String {
    let canvas = Canvas::new(raster.bbox, width);
    let px = canvas.width / raster.width as f64;
    let py = canvas.height / raster.height as f64;
    let mut out = String::new();
    canvas.open(&mut out);

    let runs = |row: usize, key: &dyn Fn(usize) -> Option<usize>| {
        let mut spans = Vec::new();
        let mut col = 0;
        while col < raster.width {
            let here = key(row * raster.width + col);
            let start = col;
            while col < raster.width && key(row * raster.width + col) == here {
                col += 1;
            }
            if let Some(k) = here {
                spans.push((start, col, k));
            }
        }
        spans
    };

    out.push_str("<g class=\"cells\" shape-rendering=\"crispEdges\">\n");
    for row in 0..raster.height {
        for (a, b, k) in runs(row, &|i| Some(raster.cells[i])) {
            let _ = writeln!(
                out,
                r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{}" fill-opacity="0.55"/>"#,
                a as f64 * px,
                row as f64 * py,
                (b - a) as f64 * px,
                py,
                class_color(k)
            );
        }
    }
    out.push_str("</g>\n");

    if let Some(mask) = &raster.highlight {
        out.push_str("<g class=\"highlight\" shape-rendering=\"crispEdges\">\n");
        for row in 0..raster.height {
            for (a, b, _) in runs(row, &|i| mask[i].then_some(0)) {
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="black" fill-opacity="0.6"/>"#,
                    a as f64 * px,
                    row as f64 * py,
                    (b - a) as f64 * px,
                    py
                );
            }
        }
        out.push_str("</g>\n");
    }

    canvas.scatter(&mut out, scatter);
    out.push_str("</svg>\n");
    out
}
