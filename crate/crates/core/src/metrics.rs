//! Pixel RMSE family, building-wise RMSE over connected footprint
//! components, and head-tail-cut accuracy.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

/// Component labels, `0` for background and `1..=count` in order of each
/// component's first pixel in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

pub fn connected_components(
    mask: &[bool],
    width: usize,
    height: usize,
    conn: Connectivity,
) -> Labeling {
    assert_eq!(mask.len(), width * height, "mask size");
    let mut labels = vec![0u32; mask.len()];
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    let offsets: &[(isize, isize)] = match conn {
        Connectivity::Four => &[(0, -1), (-1, 0), (1, 0), (0, 1)],
        Connectivity::Eight => &[
            (-1, -1),
            (0, -1),
            (1, -1),
            (-1, 0),
            (1, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
        ],
    };
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % width) as isize, (i / width) as isize);
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                    continue;
                }
                let j = ny as usize * width + nx as usize;
                if mask[j] && labels[j] == 0 {
                    labels[j] = count;
                    queue.push_back(j);
                }
            }
        }
    }
    Labeling {
        width,
        height,
        labels,
        count: count as usize,
    }
}

/// Root mean squared error over pixels where `mask` is set (all pixels when
/// `mask` is `None`). `None` when no pixel qualifies.
pub fn rmse_masked(pred: &[f64], gt: &[f64], mask: Option<&[bool]>) -> Option<f64> {
    assert_eq!(pred.len(), gt.len(), "pred/gt size");
    let mut sse = 0.0;
    let mut n = 0usize;
    for i in 0..pred.len() {
        if mask.map_or(true, |m| m[i]) {
            let d = pred[i] - gt[i];
            sse += d * d;
            n += 1;
        }
    }
    (n > 0).then(|| (sse / n as f64).sqrt())
}

/// Median; even counts average the middle two.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// `median(pred) − median(gt)` per footprint component, in label order.
pub fn building_errors(
    pred: &[f64],
    gt: &[f64],
    footprint: &[bool],
    width: usize,
    height: usize,
    conn: Connectivity,
) -> Vec<f64> {
    let lab = connected_components(footprint, width, height, conn);
    let mut p: Vec<Vec<f64>> = vec![Vec::new(); lab.count];
    let mut t: Vec<Vec<f64>> = vec![Vec::new(); lab.count];
    for (i, &l) in lab.labels.iter().enumerate() {
        if l > 0 {
            p[l as usize - 1].push(pred[i]);
            t[l as usize - 1].push(gt[i]);
        }
    }
    p.iter_mut()
        .zip(t.iter_mut())
        .map(|(a, b)| median(a).expect("component") - median(b).expect("component"))
        .collect()
}

fn rms(errors: &[f64]) -> Option<f64> {
    (!errors.is_empty())
        .then(|| (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

pub fn rmse_buildingwise(
    pred: &[f64],
    gt: &[f64],
    footprint: &[bool],
    width: usize,
    height: usize,
    conn: Connectivity,
) -> Option<f64> {
    rms(&building_errors(pred, gt, footprint, width, height, conn))
}

/// Share of pixels where `p_fg > 0.5` agrees with `gt > threshold`.
pub fn htc_accuracy(p_fg: &[f64], gt: &[f64], threshold: f64) -> Option<f64> {
    assert_eq!(p_fg.len(), gt.len(), "p_fg/gt size");
    let hits = p_fg
        .iter()
        .zip(gt)
        .filter(|(&p, &h)| (p > 0.5) == (h > threshold))
        .count();
    (!gt.is_empty()).then(|| hits as f64 / gt.len() as f64)
}

/// Metrics pooled over one or more patches. `None` marks an undefined
/// metric (no qualifying pixels or buildings).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: Option<f64>,
    pub rmse_m: Option<f64>,
    pub rmse_nm: Option<f64>,
    pub rmse_b: Option<f64>,
    pub rmse_bg: Option<f64>,
    pub htc_accuracy: Option<f64>,
    pub building_count: usize,
    pub pixel_count: usize,
    pub building_errors: Vec<f64>,
}

impl EvalReport {
    /// Flat `key=value` record on one line.
    pub fn to_text(&self) -> String {
        let f = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.6}"));
        format!(
            "rmse={} rmse_m={} rmse_nm={} rmse_b={} rmse_bg={} htc_accuracy={} building_count={} pixel_count={}",
            f(self.rmse),
            f(self.rmse_m),
            f(self.rmse_nm),
            f(self.rmse_b),
            f(self.rmse_bg),
            f(self.htc_accuracy),
            self.building_count,
            self.pixel_count
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Sse {
    sum: f64,
    n: usize,
}

impl Sse {
    fn add(&mut self, d: f64) {
        self.sum += d * d;
        self.n += 1;
    }
    fn rmse(&self) -> Option<f64> {
        (self.n > 0).then(|| (self.sum / self.n as f64).sqrt())
    }
}

/// Accumulates squared errors, building medians and mask hits patch by
/// patch, in the order patches are added.
#[derive(Debug, Clone)]
pub struct EvalAccumulator {
    threshold: f64,
    conn: Connectivity,
    all: Sse,
    building: Sse,
    non_building: Sse,
    background: Sse,
    htc_hits: usize,
    htc_total: usize,
    buildings: Vec<f64>,
}

impl EvalAccumulator {
    pub fn new(threshold: f64, conn: Connectivity) -> Self {
        EvalAccumulator {
            threshold,
            conn,
            all: Sse::default(),
            building: Sse::default(),
            non_building: Sse::default(),
            background: Sse::default(),
            htc_hits: 0,
            htc_total: 0,
            buildings: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn add_patch(
        &mut self,
        pred: &[f64],
        gt: &[f64],
        footprint: &[bool],
        p_fg: Option<&[f64]>,
        width: usize,
        height: usize,
    ) {
        for i in 0..pred.len() {
            let d = pred[i] - gt[i];
            self.all.add(d);
            if footprint[i] {
                self.building.add(d);
            } else {
                self.non_building.add(d);
            }
            if gt[i] < self.threshold {
                self.background.add(d);
            }
        }
        if let Some(p) = p_fg {
            self.htc_total += p.len();
            self.htc_hits += p
                .iter()
                .zip(gt)
                .filter(|(&p, &h)| (p > 0.5) == (h > self.threshold))
                .count();
        }
        self.buildings
            .extend(building_errors(pred, gt, footprint, width, height, self.conn));
    }

    pub fn finish(&self) -> EvalReport {
        EvalReport {
            rmse: self.all.rmse(),
            rmse_m: self.building.rmse(),
            rmse_nm: self.non_building.rmse(),
            rmse_b: rms(&self.buildings),
            rmse_bg: self.background.rmse(),
            htc_accuracy: (self.htc_total > 0)
                .then(|| self.htc_hits as f64 / self.htc_total as f64),
            building_count: self.buildings.len(),
            pixel_count: self.all.n,
            building_errors: self.buildings.clone(),
        }
    }
}
