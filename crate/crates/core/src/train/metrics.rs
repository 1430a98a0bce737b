use std::collections::BTreeMap;
use std::path::Path;

use crate::bbox::BBox;
use crate::graph::ActionGraph;

use super::TrainError;

pub const MIOU: &str = "miou";
pub const RECALL_03: &str = "r@0.3";
pub const RECALL_05: &str = "r@0.5";
pub const BOXES: &str = "boxes";

/// Named scalar metrics. Rates are fractions in `[0, 1]`.
///
/// Serialized as sorted `key=value` lines and as a JSON object with the
/// same keys.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    values: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: f64) {
        self.values.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Copies every entry of `other`, prefixing keys with `prefix` when it
    /// is not empty.
    pub fn merge(&mut self, prefix: &str, other: &MetricReport) {
        for (k, v) in &other.values {
            let key = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            self.values.insert(key, *v);
        }
    }

    pub fn to_kv(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn from_kv(text: &str) -> Result<Self, String> {
        let mut r = MetricReport::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("bad line `{line}`"))?;
            r.set(
                k,
                v.parse::<f64>()
                    .map_err(|_| format!("bad value in `{line}`"))?,
            );
        }
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.values).expect("finite map serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let values = serde_json::from_str(text).map_err(|e| e.to_string())?;
        Ok(MetricReport { values })
    }

    /// Writes `path` (key=value) and `path` with a `.json` extension.
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let write = |p: &Path, s: String| {
            std::fs::write(p, s).map_err(|source| TrainError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        write(path, self.to_kv())?;
        write(&path.with_extension("json"), self.to_json())
    }
}

/// IOU statistics over a set of box pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IouStats {
    pub sum: f64,
    pub above_03: usize,
    pub above_05: usize,
    pub count: usize,
}

impl IouStats {
    pub fn add(&mut self, iou: f64) {
        self.sum += iou;
        self.above_03 += usize::from(iou > 0.3);
        self.above_05 += usize::from(iou > 0.5);
        self.count += 1;
    }

    pub fn miou(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    fn write(&self, report: &mut MetricReport, prefix: &str) {
        let n = self.count.max(1) as f64;
        report.set(format!("{prefix}{MIOU}"), self.miou());
        report.set(format!("{prefix}{RECALL_03}"), self.above_03 as f64 / n);
        report.set(format!("{prefix}{RECALL_05}"), self.above_05 as f64 / n);
        report.set(format!("{prefix}{BOXES}"), self.count as f64);
    }
}

/// Compares predicted with ground-truth layouts, `[episode][frame][object]`.
/// Frame 0 is the given conditioning layout and is skipped.
///
/// Besides the overall mIOU and recalls, boxes are also grouped by what
/// their object is doing at that frame (`miou.<action>`, or `miou.none`).
pub fn eval_layout(
    graphs: &[&ActionGraph],
    pred: &[Vec<Vec<BBox>>],
    gt: &[Vec<Vec<BBox>>],
) -> Result<MetricReport, TrainError> {
    if pred.len() != gt.len() || graphs.len() != gt.len() {
        return Err(TrainError::Shape(format!(
            "{} graphs, {} predicted and {} ground-truth episodes",
            graphs.len(),
            pred.len(),
            gt.len()
        )));
    }
    let mut all = IouStats::default();
    let mut by_action: BTreeMap<String, IouStats> = BTreeMap::new();
    for (k, ((g, p), q)) in graphs.iter().zip(pred).zip(gt).enumerate() {
        if p.len() != q.len() {
            return Err(TrainError::Shape(format!(
                "episode {k}: {} predicted frames, {} ground-truth frames",
                p.len(),
                q.len()
            )));
        }
        for t in 1..q.len() {
            if p[t].len() != q[t].len() {
                return Err(TrainError::Shape(format!(
                    "episode {k} frame {t}: object counts differ"
                )));
            }
            for (i, (a, b)) in p[t].iter().zip(&q[t]).enumerate() {
                let iou = a.iou(*b);
                all.add(iou);
                let label = g
                    .edges()
                    .iter()
                    .find(|e| e.subject == i && e.start < t && t <= e.end)
                    .map_or("none", |e| g.action_name(e));
                by_action.entry(label.to_string()).or_default().add(iou);
            }
        }
    }
    let mut report = MetricReport::new();
    all.write(&mut report, "");
    for (label, stats) in &by_action {
        report.set(format!("{MIOU}.{label}"), stats.miou());
    }
    Ok(report)
}
