//! Fast non-dominated sorting, crowding distance, and tournament selection.

use std::cmp::Ordering;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{compare_rank_crowding, Individual, ObjectiveVector};
use crate::error::{Error, Result};

/// How many times parent selection re-draws its second parent to avoid
/// pairing an individual with itself before giving up and accepting the
/// collision (selection must terminate even on degenerate populations).
pub const TOURNAMENT_REDRAW_CAP: u32 = 10_000;

fn validate_points(points: &[ObjectiveVector]) -> Result<usize> {
    let first = points
        .first()
        .ok_or_else(|| Error::Contract("cannot sort an empty population".into()))?;
    let arity = first.len();
    if points.iter().any(|p| p.len() != arity) {
        return Err(Error::Contract(
            "objective vectors have mismatched lengths".into(),
        ));
    }
    Ok(arity)
}

/// Partitions `points` into Pareto fronts (indices into `points`).
/// Front 0 is the non-dominated set; front k+1 is what becomes non-dominated
/// once fronts 0..=k are removed. Every index appears in exactly one front;
/// fronts are listed best-first and each is sorted ascending for stable
/// output. Runs in O(m·n²) for n points with m objectives.
pub fn fast_nondominated_sort(points: &[ObjectiveVector]) -> Result<Vec<Vec<usize>>> {
    validate_points(points)?;
    let n = points.len();
    let mut dominated: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    let mut current: Vec<usize> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && points[i].dominates(&points[j]) {
                dominated[i].push(j);
                domination_count[j] += 1;
            }
        }
    }
    for (i, &count) in domination_count.iter().enumerate() {
        if count == 0 {
            current.push(i);
        }
    }
    let mut fronts = Vec::new();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated[i] {
                domination_count[j] -= 1;
                if domination_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    Ok(fronts)
}

/// Crowding distance for the members of one front, aligned with `front`
/// order. Boundary members per objective are infinite; interior members sum,
/// over objectives, the neighbour gap normalized by the front's value range.
/// Objectives with zero range contribute nothing. Negative-infinity values
/// sort below everything; the range is taken over finite values only and a
/// gap touching an infinite value contributes nothing (the sentinel means
/// "failed", not "far away").
pub fn crowding_distance(
    points: &[ObjectiveVector],
    front: &[usize],
) -> Result<Vec<super::Crowding>> {
    let arity = validate_points(points)?;
    if front.is_empty() {
        return Err(Error::Contract("crowding of an empty front".into()));
    }
    if front.iter().any(|&i| i >= points.len()) {
        return Err(Error::Contract("front index out of bounds".into()));
    }
    let k = front.len();
    let mut distance = vec![0.0f64; k];
    let mut infinite = vec![false; k];
    for obj in 0..arity {
        let value = |pos: usize| points[front[pos]].values()[obj];
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            value(a)
                .partial_cmp(&value(b))
                .expect("objective values are never NaN")
                .then(a.cmp(&b))
        });
        infinite[order[0]] = true;
        infinite[order[k - 1]] = true;
        let finite_min = order.iter().map(|&p| value(p)).find(|v| v.is_finite());
        let finite_max = order
            .iter()
            .rev()
            .map(|&p| value(p))
            .find(|v| v.is_finite());
        let range = match (finite_min, finite_max) {
            (Some(lo), Some(hi)) => hi - lo,
            _ => 0.0,
        };
        if range <= 0.0 {
            continue;
        }
        for w in 1..k - 1 {
            let below = value(order[w - 1]);
            let above = value(order[w + 1]);
            if below.is_finite() && above.is_finite() {
                distance[order[w]] += (above - below) / range;
            }
        }
    }
    Ok((0..k)
        .map(|w| {
            if infinite[w] {
                super::Crowding::Infinite
            } else {
                super::Crowding::Finite(distance[w])
            }
        })
        .collect())
}

/// Crowded comparison over fully annotated individuals (see
/// [`compare_rank_crowding`] for the ordering rule).
pub fn crowded_compare<G>(a: &Individual<G>, b: &Individual<G>) -> Ordering {
    compare_rank_crowding(
        a.rank.expect("rank assigned"),
        a.crowding.expect("crowding assigned"),
        a.id,
        b.rank.expect("rank assigned"),
        b.crowding.expect("crowding assigned"),
        b.id,
    )
}

/// Binary tournament: draws two population indices uniformly (independently,
/// so they may coincide) and returns the index winning the crowded
/// comparison.
pub fn binary_tournament<G>(population: &[Individual<G>], rng: &mut ChaCha8Rng) -> Result<usize> {
    if population.is_empty() {
        return Err(Error::Contract(
            "tournament over an empty population".into(),
        ));
    }
    let a = rng.random_range(0..population.len());
    let b = rng.random_range(0..population.len());
    Ok(match crowded_compare(&population[a], &population[b]) {
        Ordering::Greater => b,
        _ => a,
    })
}

/// Selects two parent indices by independent binary tournaments, re-drawing
/// the second while it equals the first (up to [`TOURNAMENT_REDRAW_CAP`]
/// attempts, after which the collision is accepted so selection always
/// terminates).
pub fn select_parent_pair<G>(
    population: &[Individual<G>],
    rng: &mut ChaCha8Rng,
) -> Result<(usize, usize)> {
    let first = binary_tournament(population, rng)?;
    let mut second = binary_tournament(population, rng)?;
    for _ in 0..TOURNAMENT_REDRAW_CAP {
        if population[second].id != population[first].id {
            break;
        }
        second = binary_tournament(population, rng)?;
    }
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moea::{Crowding, Op};
    use rand::SeedableRng;

    fn ov(values: &[f64]) -> ObjectiveVector {
        ObjectiveVector::new(values.to_vec()).unwrap()
    }

    fn individual(id: u64, rank: u32, crowding: Crowding) -> Individual<()> {
        Individual {
            id,
            genome: (),
            parents: vec![],
            op: Op::Init,
            objectives: None,
            rank: Some(rank),
            crowding: Some(crowding),
            response: None,
            transcripts: vec![],
        }
    }

    #[test]
    fn sorts_the_two_front_example() {
        // A=(1,1) dominates everything except itself; B is dominated by A
        // only; C and D trade off against each other and B.
        let points = vec![
            ov(&[1.0, 1.0]),
            ov(&[0.5, 0.5]),
            ov(&[1.0, 0.0]),
            ov(&[0.0, 1.0]),
        ];
        let fronts = fast_nondominated_sort(&points).unwrap();
        assert_eq!(fronts, vec![vec![0], vec![1, 2, 3]]);
    }

    #[test]
    fn sort_rejects_empty_and_ragged_input() {
        assert!(fast_nondominated_sort(&[]).is_err());
        assert!(fast_nondominated_sort(&[ov(&[1.0]), ov(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn sort_partitions_all_indices() {
        let points: Vec<ObjectiveVector> = (0..40)
            .map(|i| ov(&[(i % 7) as f64, (i % 5) as f64, (40 - i) as f64]))
            .collect();
        let fronts = fast_nondominated_sort(&points).unwrap();
        let mut seen: Vec<usize> = fronts.concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..40).collect::<Vec<_>>());
        // No member of a later front may dominate a member of an earlier one.
        for (fi, front) in fronts.iter().enumerate() {
            for later in fronts.iter().skip(fi + 1) {
                for &a in later {
                    for &b in front {
                        assert!(!points[a].dominates(&points[b]));
                    }
                }
            }
        }
    }

    #[test]
    fn crowding_middle_of_three_point_front() {
        let points = vec![ov(&[1.0, 3.0]), ov(&[2.0, 2.0]), ov(&[3.0, 1.0])];
        let crowding = crowding_distance(&points, &[0, 1, 2]).unwrap();
        assert!(crowding[0].is_infinite());
        assert!(crowding[2].is_infinite());
        match crowding[1] {
            Crowding::Finite(v) => assert!((v - 2.0).abs() < 1e-12),
            Crowding::Infinite => panic!("middle point must be finite"),
        }
    }

    #[test]
    fn crowding_small_fronts_are_all_infinite() {
        let points = vec![ov(&[1.0, 3.0]), ov(&[3.0, 1.0])];
        let crowding = crowding_distance(&points, &[0, 1]).unwrap();
        assert!(crowding.iter().all(|c| c.is_infinite()));
        let single = crowding_distance(&points[..1], &[0]).unwrap();
        assert!(single[0].is_infinite());
    }

    #[test]
    fn crowding_zero_range_objective_contributes_nothing() {
        let points = vec![ov(&[1.0, 5.0]), ov(&[2.0, 5.0]), ov(&[3.0, 5.0])];
        let crowding = crowding_distance(&points, &[0, 1, 2]).unwrap();
        match crowding[1] {
            // Only the first objective spreads: (3-1)/(3-1) = 1.
            Crowding::Finite(v) => assert!((v - 1.0).abs() < 1e-12),
            Crowding::Infinite => panic!("middle point must be finite"),
        }
    }

    #[test]
    fn crowding_treats_negative_infinity_as_failed_not_far() {
        let points = vec![
            ov(&[f64::NEG_INFINITY, 4.0]),
            ov(&[1.0, 3.0]),
            ov(&[2.0, 2.0]),
            ov(&[3.0, 1.0]),
        ];
        let crowding = crowding_distance(&points, &[0, 1, 2, 3]).unwrap();
        // Point 1 neighbours the failed point in objective 0: that gap is
        // skipped, so only objective 1 contributes (4-2)/(4-1).
        match crowding[1] {
            Crowding::Finite(v) => assert!((v - 2.0 / 3.0).abs() < 1e-12, "got {v}"),
            Crowding::Infinite => panic!("interior point must be finite"),
        }
        // The failed point is an objective-0 boundary, hence infinite.
        assert!(crowding[0].is_infinite());
    }

    #[test]
    fn tournament_prefers_lower_rank_then_higher_crowding() {
        let population = vec![
            individual(0, 1, Crowding::Infinite),
            individual(1, 0, Crowding::Finite(0.5)),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let winner = binary_tournament(&population, &mut rng).unwrap();
            // Index 1 wins every tournament it appears in; index 0 can only
            // win a tournament of (0, 0).
            if winner == 0 {
                continue;
            }
            assert_eq!(population[winner].id, 1);
        }
    }

    #[test]
    fn parent_pair_avoids_self_pairing_when_possible() {
        let population = vec![
            individual(0, 0, Crowding::Infinite),
            individual(1, 0, Crowding::Infinite),
            individual(2, 0, Crowding::Finite(1.0)),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (a, b) = select_parent_pair(&population, &mut rng).unwrap();
            assert_ne!(population[a].id, population[b].id);
        }
    }
}
