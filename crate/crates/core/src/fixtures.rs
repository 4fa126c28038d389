//! Small reference worlds used by tests, examples and the CLI demo.

use alloc::vec::Vec;

use crate::geom::{Point2, Pose2D};
use crate::world::{Cell, CellIndex, OccupancyGrid};

pub const RESOLUTION: f64 = 0.05;

/// An empty walled room of `width` × `height` meters with 0.1 m walls.
pub fn walled_room(width: f64, height: f64) -> OccupancyGrid {
    let cols = libm::round(width / RESOLUTION) as usize;
    let rows = libm::round(height / RESOLUTION) as usize;
    let mut g =
        OccupancyGrid::new(cols, rows, RESOLUTION, Pose2D::default(), Cell::Free).expect("fixture geometry is valid");
    let t = 0.1;
    g.fill_rect(Point2::new(0.0, 0.0), Point2::new(width, t), Cell::Occupied);
    g.fill_rect(Point2::new(0.0, height - t), Point2::new(width, height), Cell::Occupied);
    g.fill_rect(Point2::new(0.0, 0.0), Point2::new(t, height), Cell::Occupied);
    g.fill_rect(Point2::new(width - t, 0.0), Point2::new(width, height), Cell::Occupied);
    g
}

/// Two 5 × 5 m rooms joined by a 1.2 m door, with a bed-sized block in the
/// west room and a sealed cabinet in the east room.
#[derive(Debug, Clone)]
pub struct TwoRooms {
    pub grid: OccupancyGrid,
    pub start: Pose2D,
    /// Surface cells in both rooms that should be disinfected.
    pub targets: Vec<CellIndex>,
    /// The inside of the sealed cabinet: part of `targets`, visible from nowhere.
    pub occluded: CellIndex,
}

pub fn two_rooms() -> TwoRooms {
    let mut g = walled_room(10.0, 5.0);
    // Partition with a door at y in [1.9, 3.1].
    g.fill_rect(Point2::new(4.95, 0.0), Point2::new(5.05, 1.9), Cell::Occupied);
    g.fill_rect(Point2::new(4.95, 3.1), Point2::new(5.05, 5.0), Cell::Occupied);
    // Bed in the west room.
    g.fill_rect(Point2::new(2.2, 3.0), Point2::new(3.2, 3.6), Cell::Occupied);
    // Sealed cabinet in the east room: 0.1 m walls around a hollow center.
    g.fill_rect(Point2::new(8.0, 3.5), Point2::new(8.6, 4.1), Cell::Occupied);
    g.fill_rect(Point2::new(8.1, 3.6), Point2::new(8.5, 4.0), Cell::Free);

    let mut targets = Vec::new();
    let mut take = |min: Point2, max: Point2, g: &OccupancyGrid| {
        for row in 0..g.height() {
            for col in 0..g.width() {
                let c = CellIndex::new(col, row);
                let p = g.cell_center(c);
                if p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && exposed(g, c) {
                    targets.push(c);
                }
            }
        }
    };
    // West wall face, bed surface, a bedside table top (free floor patch),
    // then the east room's far wall face.
    take(Point2::new(0.0, 1.5), Point2::new(0.1, 3.5), &g);
    take(Point2::new(2.2, 3.0), Point2::new(3.2, 3.6), &g);
    take(Point2::new(3.4, 3.8), Point2::new(3.6, 4.0), &g);
    take(Point2::new(9.9, 1.0), Point2::new(10.0, 2.0), &g);
    take(Point2::new(6.5, 0.9), Point2::new(6.7, 1.1), &g);
    let occluded = g.world_to_cell(Point2::new(8.3, 3.8)).expect("inside the map");
    targets.push(occluded);
    TwoRooms { grid: g, start: Pose2D::new(1.5, 2.5, 0.0), targets, occluded }
}

/// Free cells, and blocked cells with a free 4-neighbor (surfaces).
fn exposed(g: &OccupancyGrid, c: CellIndex) -> bool {
    match g.get(c) {
        Some(Cell::Free) => true,
        Some(Cell::Occupied) => {
            let (col, row) = (c.col as isize, c.row as isize);
            [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|&(dc, dr)| {
                let (nc, nr) = (col + dc, row + dr);
                nc >= 0 && nr >= 0 && matches!(g.get(CellIndex::new(nc as usize, nr as usize)), Some(Cell::Free))
            })
        }
        _ => false,
    }
}
