//! Two-objective hypervolume (area dominated by a point set, maximization).

use super::ObjectiveVector;
use crate::error::{Error, Result};

/// Area jointly dominated by `points` relative to `reference`, for exactly
/// two maximized objectives: the area of the union of the rectangles
/// spanning from the reference point up to each point. Points that do not
/// exceed the reference in both coordinates contribute nothing; an empty set
/// has hypervolume 0. Larger is better.
///
/// Implemented as a sweep over points sorted by first objective descending:
/// each strict improvement in the running second-objective maximum adds a
/// rectangle of width (x − ref_x) and height (y − max_y_so_far).
pub fn hypervolume_2d(points: &[ObjectiveVector], reference: (f64, f64)) -> Result<f64> {
    if points.iter().any(|p| p.len() != 2) {
        return Err(Error::Contract(
            "hypervolume is only defined here for two objectives".into(),
        ));
    }
    let mut sorted: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.values()[0], p.values()[1]))
        .filter(|&(x, y)| x > reference.0 && y > reference.1)
        .collect();
    sorted.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("objective values are never NaN")
            .then(
                b.1.partial_cmp(&a.1)
                    .expect("objective values are never NaN"),
            )
    });
    let mut area = 0.0;
    let mut best_y = reference.1;
    for (x, y) in sorted {
        if y > best_y {
            area += (x - reference.0) * (y - best_y);
            best_y = y;
        }
    }
    Ok(area)
}
