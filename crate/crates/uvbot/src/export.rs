//! Run artifacts: dose heatmap, coverage report and pose trace.

use std::fmt::Write as _;

use serde::Serialize;
use uvbot_core::disinfection::{coverage_report, log_reduction, DisinfectionTarget, DoseGrid};
use uvbot_core::sim::TickReport;
use uvbot_core::{CellIndex, Pose2D, Simulator};

use crate::mapio::encode_pgm;

/// Grayscale PGM of the dose, black at zero and white at `scale` or above.
/// Image rows run top (max y) to bottom like the map files.
pub fn dose_heatmap(dose: &DoseGrid, scale: f64) -> Vec<u8> {
    let (w, h) = (dose.width(), dose.height());
    let mut pixels = Vec::with_capacity(w * h);
    for image_row in 0..h {
        let row = h - 1 - image_row;
        pixels.extend(dose.values()[row * w..(row + 1) * w].iter().map(|&d| {
            if scale > 0.0 {
                (255.0 * (d / scale).clamp(0.0, 1.0)).round() as u8
            } else {
                0
            }
        }));
    }
    encode_pgm(w, h, &pixels)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellStat {
    pub col: usize,
    pub row: usize,
    pub x: f64,
    pub y: f64,
    pub dose: f64,
    pub covered: bool,
    pub uncoverable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_reduction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanStop {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub dwell: f64,
}

impl PlanStop {
    pub fn new(pose: &Pose2D, dwell: f64) -> Self {
        Self { x: pose.x, y: pose.y, theta: pose.theta(), dwell }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageJson {
    pub required_dose: f64,
    /// Over all target cells.
    pub covered_fraction: f64,
    /// Over the cells some pose can see.
    pub coverable_fraction: f64,
    pub min_dose: f64,
    pub mean_dose: f64,
    pub cells: Vec<CellStat>,
    pub uncoverable: Vec<[usize; 2]>,
    pub plan: Vec<PlanStop>,
}

pub fn coverage_json(
    sim: &Simulator,
    target: &DisinfectionTarget,
    uncoverable: &[CellIndex],
    plan: Vec<PlanStop>,
    d90: Option<f64>,
) -> CoverageJson {
    let r = coverage_report(sim.dose(), target, uncoverable);
    let cells = target
        .cells
        .iter()
        .map(|&c| {
            let p = sim.grid().cell_center(c);
            let dose = sim.dose().get(c);
            CellStat {
                col: c.col,
                row: c.row,
                x: p.x,
                y: p.y,
                dose,
                covered: dose >= target.required_dose,
                uncoverable: uncoverable.contains(&c),
                log_reduction: d90.and_then(|d| log_reduction(dose, d).ok()),
            }
        })
        .collect();
    CoverageJson {
        required_dose: target.required_dose,
        covered_fraction: r.covered_fraction,
        coverable_fraction: r.coverable_fraction,
        min_dose: r.min_dose,
        mean_dose: r.mean_dose,
        cells,
        uncoverable: r.uncoverable.iter().map(|c| [c.col, c.row]).collect(),
        plan,
    }
}

pub const TRACE_HEADER: &str = "t,x,y,theta,v,w,mode,lamp\n";

/// One CSV line of the pose trace.
pub fn trace_row(out: &mut String, t: f64, sim: &Simulator) {
    let s = sim.state();
    let _ = writeln!(
        out,
        "{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
        t,
        s.pose.x,
        s.pose.y,
        s.pose.theta(),
        s.twist.v,
        s.twist.w,
        s.autonomy.as_str(),
        u8::from(s.lamp_on)
    );
}

/// Collects trace rows tick by tick.
#[derive(Debug, Clone)]
pub struct Trace {
    csv: String,
    rows: usize,
}

impl Default for Trace {
    fn default() -> Self {
        Self { csv: TRACE_HEADER.to_string(), rows: 0 }
    }
}

impl Trace {
    pub fn record(&mut self, sim: &Simulator, report: &TickReport) {
        trace_row(&mut self.csv, report.time, sim);
        self.rows += 1;
    }

    pub fn record_initial(&mut self, sim: &Simulator) {
        trace_row(&mut self.csv, sim.time(), sim);
        self.rows += 1;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn as_str(&self) -> &str {
        &self.csv
    }
}
