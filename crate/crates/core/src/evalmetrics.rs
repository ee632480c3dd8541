//! Sampling-quality metrics: point recall and foreground rate, per-scene
//! aggregation, and table/CSV emission.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_in_box, OrientedBox, PointCloud};
use crate::scalar::Scalar;

/// Fraction of boxes that contain at least one sampled point.
///
/// Undefined (an error) when there are no boxes. Boxes with no interior
/// points at all simply count as misses.
pub fn point_recall<T: Scalar>(
    sampled: &[usize],
    cloud: &PointCloud<T>,
    boxes: &[OrientedBox<T>],
) -> Result<f64> {
    if boxes.is_empty() {
        return Err(Error::UndefinedMetric(
            "point recall needs at least one box",
        ));
    }
    let hits = boxes_hit(sampled, cloud, boxes)?;
    Ok(hits as f64 / boxes.len() as f64)
}

fn boxes_hit<T: Scalar>(
    sampled: &[usize],
    cloud: &PointCloud<T>,
    boxes: &[OrientedBox<T>],
) -> Result<usize> {
    check_indices(sampled, cloud)?;
    Ok(boxes
        .iter()
        .filter(|b| sampled.iter().any(|&i| point_in_box(cloud.point(i), b)))
        .count())
}

fn check_indices<T: Scalar>(sampled: &[usize], cloud: &PointCloud<T>) -> Result<()> {
    match sampled.iter().find(|&&i| i >= cloud.len()) {
        Some(i) => Err(Error::InvalidInput(format!(
            "sampled index {i} out of range for {} points",
            cloud.len()
        ))),
        None => Ok(()),
    }
}

fn foreground_hits<T: Scalar>(
    sampled: &[usize],
    cloud: &PointCloud<T>,
    boxes: &[OrientedBox<T>],
) -> Result<usize> {
    check_indices(sampled, cloud)?;
    Ok(sampled
        .iter()
        .filter(|&&i| boxes.iter().any(|b| point_in_box(cloud.point(i), b)))
        .count())
}

/// Fraction of sampled points lying inside any box.
pub fn foreground_rate<T: Scalar>(
    sampled: &[usize],
    cloud: &PointCloud<T>,
    boxes: &[OrientedBox<T>],
) -> Result<f64> {
    if sampled.is_empty() {
        return Err(Error::InvalidInput(
            "foreground rate needs at least one sample".into(),
        ));
    }
    Ok(foreground_hits(sampled, cloud, boxes)? as f64 / sampled.len() as f64)
}

/// Raw counts and rates for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene: String,
    pub sampled: usize,
    pub foreground_samples: usize,
    pub boxes: usize,
    pub boxes_hit: usize,
    pub foreground_rate: f64,
    /// `None` when the scene has no boxes.
    pub point_recall: Option<f64>,
}

pub fn evaluate_scene<T: Scalar>(
    scene: impl Into<String>,
    sampled: &[usize],
    cloud: &PointCloud<T>,
    boxes: &[OrientedBox<T>],
) -> Result<SceneMetrics> {
    let fg = foreground_hits(sampled, cloud, boxes)?;
    let hit = boxes_hit(sampled, cloud, boxes)?;
    Ok(SceneMetrics {
        scene: scene.into(),
        sampled: sampled.len(),
        foreground_samples: fg,
        boxes: boxes.len(),
        boxes_hit: hit,
        foreground_rate: foreground_rate(sampled, cloud, boxes)?,
        point_recall: (!boxes.is_empty()).then(|| hit as f64 / boxes.len() as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RecallAverage {
    /// Mean of per-scene recalls over scenes that have boxes.
    #[default]
    Macro,
    /// Total boxes hit over total boxes.
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingReport {
    pub method: String,
    pub level: usize,
    pub budget: usize,
    pub foreground_rate: f64,
    pub point_recall: Option<f64>,
    /// Set when no scene had any box, so recall could not be computed.
    pub recall_undefined: bool,
    pub scenes: usize,
    /// Scenes that contributed to the recall average.
    pub recall_scenes: usize,
    pub per_scene: Vec<SceneMetrics>,
}

/// Unweighted mean over scenes (recall only over scenes with boxes).
pub fn aggregate(
    method: &str,
    level: usize,
    budget: usize,
    per_scene: Vec<SceneMetrics>,
    averaging: RecallAverage,
) -> Result<SamplingReport> {
    if per_scene.is_empty() {
        return Err(Error::InvalidInput(
            "aggregate needs at least one scene".into(),
        ));
    }
    let n = per_scene.len();
    let fg = per_scene.iter().map(|s| s.foreground_rate).sum::<f64>() / n as f64;
    let with_boxes: Vec<&SceneMetrics> = per_scene.iter().filter(|s| s.boxes > 0).collect();
    let recall = if with_boxes.is_empty() {
        None
    } else {
        Some(match averaging {
            RecallAverage::Macro => {
                with_boxes
                    .iter()
                    .filter_map(|s| s.point_recall)
                    .sum::<f64>()
                    / with_boxes.len() as f64
            }
            RecallAverage::Micro => {
                let hit: usize = with_boxes.iter().map(|s| s.boxes_hit).sum();
                let total: usize = with_boxes.iter().map(|s| s.boxes).sum();
                hit as f64 / total as f64
            }
        })
    };
    Ok(SamplingReport {
        method: method.to_string(),
        level,
        budget,
        foreground_rate: fg,
        point_recall: recall,
        recall_undefined: recall.is_none(),
        scenes: n,
        recall_scenes: with_boxes.len(),
        per_scene,
    })
}

pub const CSV_HEADER: &str = "method,level,budget,foreground_rate,point_recall,scenes";

fn fmt_recall(r: Option<f64>) -> String {
    r.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

pub fn write_csv(reports: &[SamplingReport], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{:.6},{},{}",
            r.method,
            r.level,
            r.budget,
            r.foreground_rate,
            fmt_recall(r.point_recall),
            r.scenes
        )?;
    }
    Ok(())
}

/// Aligned plain-text table; rates shown as percentages.
pub fn format_table(reports: &[SamplingReport]) -> String {
    let method_w = reports
        .iter()
        .map(|r| r.method.len())
        .chain(std::iter::once("method".len()))
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<method_w$}  {:>5}  {:>6}  {:>15}  {:>12}  {:>6}",
        "method", "level", "budget", "foreground_rate", "point_recall", "scenes"
    );
    let _ = writeln!(out, "{}", "-".repeat(method_w + 57));
    for r in reports {
        let recall = r
            .point_recall
            .map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", v * 100.0));
        let _ = writeln!(
            out,
            "{:<method_w$}  {:>5}  {:>6}  {:>15.2}  {:>12}  {:>6}",
            r.method,
            r.level,
            r.budget,
            r.foreground_rate * 100.0,
            recall,
            r.scenes
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxes_at(xs: &[f64]) -> Vec<OrientedBox<f64>> {
        xs.iter()
            .map(|&x| OrientedBox::new([x, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0).unwrap())
            .collect()
    }

    fn cloud(xs: &[f64]) -> PointCloud<f64> {
        PointCloud::from_coords(xs.iter().map(|&x| [x, 0.0, 0.0]).collect()).unwrap()
    }

    #[test]
    fn recall_cases() {
        let c = cloud(&[0.0, 0.1, 10.0, 20.0, 30.0, 50.0]);
        assert_eq!(point_recall(&[0, 1], &c, &boxes_at(&[0.0])).unwrap(), 1.0);
        assert_eq!(
            point_recall(&[5], &c, &boxes_at(&[0.0, 10.0, 20.0])).unwrap(),
            0.0
        );
        // Boxes 0..3 at 0, 10, 20, 30; samples hit boxes 1 and 3.
        assert_eq!(
            point_recall(&[2, 4, 5], &c, &boxes_at(&[0.0, 10.0, 20.0, 30.0])).unwrap(),
            0.5
        );
        assert!(matches!(
            point_recall(&[0], &c, &[]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn foreground_rate_cases() {
        let c = cloud(&[0.0, 0.1, 10.0]);
        assert_eq!(
            foreground_rate(&[0, 1], &c, &boxes_at(&[0.0])).unwrap(),
            1.0
        );
        assert_eq!(foreground_rate(&[0, 1, 2], &c, &[]).unwrap(), 0.0);
        assert!(foreground_rate(&[], &c, &[]).is_err());
        assert!(foreground_rate(&[7], &c, &[]).is_err());

        let xs: Vec<f64> = (0..64)
            .map(|i| {
                if i < 20 {
                    0.01 * i as f64
                } else {
                    100.0 + i as f64
                }
            })
            .collect();
        let c = cloud(&xs);
        let idx: Vec<usize> = (0..64).collect();
        assert_eq!(
            foreground_rate(&idx, &c, &boxes_at(&[0.0])).unwrap(),
            0.3125
        );
    }

    fn scene(recall: Option<f64>, fg: f64) -> SceneMetrics {
        SceneMetrics {
            scene: "s".into(),
            sampled: 10,
            foreground_samples: (fg * 10.0) as usize,
            boxes: if recall.is_some() { 10 } else { 0 },
            boxes_hit: recall.map_or(0, |r| (r * 10.0).round() as usize),
            foreground_rate: fg,
            point_recall: recall,
        }
    }

    #[test]
    fn aggregation() {
        let single = aggregate(
            "fps",
            1,
            10,
            vec![scene(Some(0.7), 0.2)],
            RecallAverage::Macro,
        )
        .unwrap();
        assert_eq!(single.point_recall, Some(0.7));
        assert_eq!(single.foreground_rate, 0.2);

        let two = aggregate(
            "fps",
            1,
            10,
            vec![scene(Some(0.8), 0.1), scene(Some(1.0), 0.3)],
            RecallAverage::Macro,
        )
        .unwrap();
        assert!((two.point_recall.unwrap() - 0.9).abs() < 1e-15);
        assert!((two.foreground_rate - 0.2).abs() < 1e-15);

        let masked = aggregate(
            "fps",
            1,
            10,
            vec![scene(Some(1.0), 0.5), scene(None, 0.0)],
            RecallAverage::Macro,
        )
        .unwrap();
        assert_eq!(masked.point_recall, Some(1.0));
        assert_eq!(masked.recall_scenes, 1);
        assert_eq!(masked.scenes, 2);
        assert!(!masked.recall_undefined);

        let none = aggregate("fps", 1, 10, vec![scene(None, 0.0)], RecallAverage::Macro).unwrap();
        assert!(none.recall_undefined);
        assert_eq!(none.point_recall, None);

        assert!(aggregate("fps", 1, 10, vec![], RecallAverage::Macro).is_err());
    }

    #[test]
    fn micro_average_weights_by_boxes() {
        let mut a = scene(Some(1.0), 0.1);
        a.boxes = 1;
        a.boxes_hit = 1;
        let mut b = scene(Some(0.0), 0.1);
        b.boxes = 3;
        b.boxes_hit = 0;
        let r = aggregate("x", 1, 1, vec![a, b], RecallAverage::Micro).unwrap();
        assert_eq!(r.point_recall, Some(0.25));
    }

    #[test]
    fn csv_layout() {
        let r = aggregate(
            "sfps(g=1)",
            2,
            512,
            vec![scene(Some(0.5), 0.25)],
            RecallAverage::Macro,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(std::slice::from_ref(&r), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            format!("{CSV_HEADER}\nsfps(g=1),2,512,0.250000,0.500000,1\n")
        );
        let table = format_table(&[r]);
        assert!(table.contains("25.00"));
        assert!(table.contains("50.00"));
    }
}
