//! Rigid root-template scoring over an image pyramid.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::hog::{block_grid, HogParams};
use super::{non_max_suppression, BBox, Detection, ObjectClass};
use crate::error::{Error, Result};
use crate::imagekit::Pyramid;

const NMS_IOU: f64 = 0.5;

/// Linear HOG template covering `cells_x` x `cells_y` cells. `weights` use the
/// descriptor layout of `hog_features` for a window of that size.
#[derive(Debug, Clone, PartialEq)]
pub struct HogTemplate {
    pub class: ObjectClass,
    pub cells_x: usize,
    pub cells_y: usize,
    pub bins: usize,
    pub bias: f64,
    pub weights: Vec<f64>,
}

impl HogTemplate {
    pub fn new(
        class: ObjectClass,
        cells_x: usize,
        cells_y: usize,
        bins: usize,
        bias: f64,
        weights: Vec<f64>,
        params: &HogParams,
    ) -> Result<Self> {
        let t = Self {
            class,
            cells_x,
            cells_y,
            bins,
            bias,
            weights,
        };
        t.check(params)?;
        Ok(t)
    }

    fn expected_len(&self, params: &HogParams) -> usize {
        params.blocks_along(self.cells_x) * params.blocks_along(self.cells_y) * params.block_len()
    }

    fn check(&self, params: &HogParams) -> Result<()> {
        params.validate()?;
        if self.bins != params.bins {
            return Err(Error::invalid(format!(
                "template has {} bins, hog params use {}",
                self.bins, params.bins
            )));
        }
        let n = self.expected_len(params);
        if n == 0 || self.weights.len() != n {
            return Err(Error::invalid(format!(
                "template {}x{} cells needs {n} weights, got {}",
                self.cells_x,
                self.cells_y,
                self.weights.len()
            )));
        }
        if !self.bias.is_finite() || !self.weights.iter().all(|w| w.is_finite()) {
            return Err(Error::invalid("template weights must be finite"));
        }
        Ok(())
    }

    pub fn window_size(&self, params: &HogParams) -> (usize, usize) {
        (self.cells_x * params.cell_size, self.cells_y * params.cell_size)
    }

    /// Parse `cells_x cells_y bins bias` followed by one weight per line.
    pub fn parse(text: &str, class: ObjectClass, params: &HogParams, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let parse_err = |line, message: String| Error::Parse {
            path: path.clone(),
            line,
            message,
        };
        let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty template".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(hline, "header must be `cells_x cells_y bins bias`".into()));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| parse_err(hline, format!("`{s}`: {e}")));
        let (cells_x, cells_y, bins) = (int(fields[0])?, int(fields[1])?, int(fields[2])?);
        let bias = fields[3]
            .parse::<f64>()
            .map_err(|e| parse_err(hline, format!("`{}`: {e}", fields[3])))?;
        let weights = lines
            .map(|(n, l)| l.parse::<f64>().map_err(|e| parse_err(n, format!("`{l}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(class, cells_x, cells_y, bins, bias, weights, params)
    }

    pub fn load(path: impl AsRef<Path>, class: ObjectClass, params: &HogParams) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, class, params, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {} {:?}\n", self.cells_x, self.cells_y, self.bins, self.bias);
        for w in &self.weights {
            let _ = writeln!(out, "{w:?}");
        }
        out
    }
}

/// Slide `template` densely (one block stride per step) over every pyramid
/// level. Windows scoring above `score_threshold` are mapped back to level-0
/// pixels and reduced by greedy NMS at IoU 0.5. Detections carry frame 0.
pub fn score_template(
    pyramid: &Pyramid,
    template: &HogTemplate,
    params: &HogParams,
    score_threshold: f64,
) -> Result<Vec<Detection>> {
    template.check(params)?;
    let coarse = pyramid.coarsest();
    let (cells_x, cells_y) = (coarse.width() / params.cell_size, coarse.height() / params.cell_size);
    if template.cells_x > cells_x || template.cells_y > cells_y {
        return Err(Error::invalid(format!(
            "template of {}x{} cells does not fit the coarsest level ({cells_x}x{cells_y} cells)",
            template.cells_x, template.cells_y
        )));
    }
    let tbx = params.blocks_along(template.cells_x);
    let tby = params.blocks_along(template.cells_y);
    let block_len = params.block_len();
    let base = pyramid.level(0);
    let (win_w, win_h) = template.window_size(params);
    let mut found = Vec::new();
    for level in pyramid.levels() {
        let grid = block_grid(level, params)?;
        let sx = base.width() as f64 / level.width() as f64;
        let sy = base.height() as f64 / level.height() as f64;
        if grid.blocks_x < tbx || grid.blocks_y < tby {
            continue;
        }
        for oy in 0..=grid.blocks_y - tby {
            for ox in 0..=grid.blocks_x - tbx {
                let mut score = template.bias;
                for j in 0..tby {
                    for i in 0..tbx {
                        let w = &template.weights[(j * tbx + i) * block_len..][..block_len];
                        let f = grid.block(ox + i, oy + j);
                        score += w.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                if score > score_threshold {
                    let step = (params.block_stride * params.cell_size) as f64;
                    let bbox = BBox::new(
                        ox as f64 * step * sx,
                        oy as f64 * step * sy,
                        win_w as f64 * sx,
                        win_h as f64 * sy,
                    );
                    found.push(Detection::new(0, template.class, bbox, score)?);
                }
            }
        }
    }
    Ok(non_max_suppression(found, NMS_IOU))
}
