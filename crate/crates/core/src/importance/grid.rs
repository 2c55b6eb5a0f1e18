use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{family_label, ComponentId, FAMILIES};

/// Provenance and intermediate values of a grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub checkpoint: String,
    pub dataset: String,
    /// Clip bound `C` of the contribution score.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
    /// BLEU tolerance `ε` of the criticality score.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_grid: Option<Vec<f64>>,
    /// Set when every score is zero because no component lowered BLEU.
    #[serde(default)]
    pub degenerate: bool,
    /// BLEU with each component masked.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub masked_bleu: BTreeMap<ComponentId, f64>,
    /// BLEU at each grid `α`, per component.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub curves: BTreeMap<ComponentId, Vec<f64>>,
}

/// One score per existing component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceGrid {
    pub metric: String,
    pub scores: BTreeMap<ComponentId, f64>,
    /// Unmodified-model BLEU for BLEU-based metrics.
    pub baseline_bleu: Option<f64>,
    pub meta: GridMeta,
}

pub const CSV_HEADER: &str = "layer,E:SA,E:FF,D:SA,D:EA,D:FF";

impl ImportanceGrid {
    pub fn new(metric: &str, scores: BTreeMap<ComponentId, f64>, baseline_bleu: Option<f64>, meta: GridMeta) -> Self {
        Self {
            metric: metric.to_string(),
            scores,
            baseline_bleu,
            meta,
        }
    }

    pub fn get(&self, id: &ComponentId) -> Option<f64> {
        self.scores.get(id).copied()
    }

    /// Scores in canonical component order.
    pub fn values(&self) -> Vec<f64> {
        self.scores.values().copied().collect()
    }

    fn depth(&self) -> usize {
        self.scores.keys().map(|id| id.layer + 1).max().unwrap_or(0)
    }

    /// Layers top-down, families left to right; absent cells are empty.
    fn rows(&self) -> Vec<(usize, Vec<Option<f64>>)> {
        (0..self.depth())
            .rev()
            .map(|layer| {
                let cells = FAMILIES
                    .iter()
                    .map(|&(side, kind)| self.get(&ComponentId::new(side, layer, kind)))
                    .collect();
                (layer, cells)
            })
            .collect()
    }

    /// Mean score of one family column, over the layers that have it.
    pub fn column_mean(&self, family: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .scores
            .iter()
            .filter(|(id, _)| id.family() == family)
            .map(|(_, &v)| v)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for (layer, cells) in self.rows() {
            out.push_str(&layer.to_string());
            for c in cells {
                out.push(',');
                if let Some(v) = c {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    /// Heatmap with the CSV's layout: linear grayscale, darker cells score
    /// higher, value printed in each cell. Scores above 1 are scaled by the
    /// grid maximum.
    pub fn to_svg(&self) -> String {
        const CELL_W: usize = 72;
        const CELL_H: usize = 36;
        const LEFT: usize = 56;
        const TOP: usize = 48;
        let rows = self.rows();
        let width = LEFT + CELL_W * FAMILIES.len() + 8;
        let height = TOP + CELL_H * rows.len() + 8;
        let top = self.scores.values().copied().fold(1.0, f64::max);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
            w = width,
            h = height
        );
        let _ = writeln!(s, r#"<text x="{}" y="16" font-size="13">{}</text>"#, LEFT, xml_escape(&self.metric));
        for (j, &(side, kind)) in FAMILIES.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                LEFT + j * CELL_W + CELL_W / 2,
                TOP - 8,
                family_label(side, kind)
            );
        }
        for (i, (layer, cells)) in rows.iter().enumerate() {
            let y = TOP + i * CELL_H;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                LEFT - 8,
                y + CELL_H / 2 + 4,
                layer
            );
            for (j, cell) in cells.iter().enumerate() {
                let x = LEFT + j * CELL_W;
                match cell {
                    Some(v) => {
                        let level = (v / top).clamp(0.0, 1.0);
                        let gray = (255.0 * (1.0 - level)).round() as u8;
                        let ink = if gray < 128 { "#ffffff" } else { "#000000" };
                        let _ = writeln!(
                            s,
                            r##"<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="rgb({gray},{gray},{gray})" stroke="#808080"/>"##
                        );
                        let _ = writeln!(
                            s,
                            r#"<text x="{}" y="{}" text-anchor="middle" fill="{}">{:.2}</text>"#,
                            x + CELL_W / 2,
                            y + CELL_H / 2 + 4,
                            ink,
                            v
                        );
                    }
                    None => {
                        let _ = writeln!(
                            s,
                            r##"<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="none" stroke="#c0c0c0"/>"##
                        );
                    }
                }
            }
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("grid JSON: {}", e)))
    }

    /// Writes `<stem>.json`, `<stem>.csv` and `<stem>.svg` into `dir`.
    pub fn write_all(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (ext, body) in [("json", self.to_json()), ("csv", self.to_csv()), ("svg", self.to_svg())] {
            let path = dir.join(format!("{}.{}", stem, ext));
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
