//! Height layering and per-layer binary erosion.

use std::collections::HashSet;

use super::{FootState, FootholdError, FootholdParams, GridCloud};

/// One 8-neighborhood erosion pass: a cell survives only with all eight
/// neighbors occupied.
pub fn erode_once(occupancy: &HashSet<(i64, i64)>) -> HashSet<(i64, i64)> {
    occupancy
        .iter()
        .filter(|&&(i, j)| {
            for di in -1..=1i64 {
                for dj in -1..=1i64 {
                    if (di, dj) != (0, 0) && !occupancy.contains(&(i + di, j + dj)) {
                        return false;
                    }
                }
            }
            true
        })
        .copied()
        .collect()
}

fn erode_n(mut occupancy: HashSet<(i64, i64)>, n: u32) -> HashSet<(i64, i64)> {
    for _ in 0..n {
        if occupancy.is_empty() {
            break;
        }
        occupancy = erode_once(&occupancy);
    }
    occupancy
}

/// Split the grid into height layers `k = floor(z / h_layer)`, erode each
/// layer's occupancy `n_erosion` times, and give cells inside the
/// sole-height band `[z_foot - delta_foot, z_foot + delta_foot]` one extra
/// pass. Survivors are returned with their layer index filled in.
pub fn layer_and_erode(
    grid: &GridCloud,
    foot: &FootState,
    params: &FootholdParams,
) -> Result<GridCloud, FootholdError> {
    params.validate()?;
    let z_foot = foot.z_foot();
    let band = |z: f64| (z - z_foot).abs() <= params.delta_foot;

    // Layer occupancies.
    let mut layers: std::collections::BTreeMap<i64, HashSet<(i64, i64)>> =
        std::collections::BTreeMap::new();
    for (key, cell) in &grid.cells {
        let k = (cell.pos.z / params.h_layer).floor() as i64;
        layers.entry(k).or_default().insert(*key);
    }

    let mut out = GridCloud::default();
    for (k, occupancy) in layers {
        let eroded = erode_n(occupancy, params.n_erosion);
        // The sole-height band is eroded once more for climb safety.
        let extra = erode_once(&eroded);
        for key in eroded {
            let mut cell = grid.cells[&key];
            if band(cell.pos.z) && !extra.contains(&key) {
                continue;
            }
            cell.layer = k;
            out.cells.insert(key, cell);
        }
    }
    Ok(out)
}
