//! Wasserstein-2 distance between probability densities on a [`Space`],
//! solved exactly as the transportation linear program.
//!
//! The coupling LP is solved by successive shortest augmenting paths with
//! node potentials on the dense bipartite transport graph. Masses are real
//! numbers; every augmentation saturates a source, a sink, or a residual
//! arc, and dual feasibility is maintained throughout, so the final flow
//! carries an optimality certificate (the duality gap, checked in tests).

use crate::error::{CoreError, Result};
use crate::space::{Field, Space};

const MASS_EPS: f64 = 1e-13;

/// W2 between two densities with respect to `m` (so `sum p m = 1`).
pub fn wasserstein2(s: &Space, p: &Field, q: &Field) -> Result<f64> {
    s.check_field(p)?;
    s.check_field(q)?;
    let a = to_masses(s, p)?;
    let b = to_masses(s, q)?;
    wasserstein2_masses(s, &a, &b)
}

/// W2 between two probability mass vectors on the points of `s`.
pub(crate) fn wasserstein2_masses(s: &Space, a: &[f64], b: &[f64]) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let sol = solve_transport(s, a, b)?;
    debug_assert!(
        sol.gap <= 1e-9 * (1.0 + sol.cost),
        "transport duality gap {} exceeds certificate tolerance",
        sol.gap
    );
    Ok(sol.cost.max(0.0).sqrt())
}

fn to_masses(s: &Space, density: &Field) -> Result<Vec<f64>> {
    let mut masses = Vec::with_capacity(s.n());
    for (x, (&d, &m)) in density.values().iter().zip(s.measure()).enumerate() {
        if d < -1e-12 {
            return Err(CoreError::InvalidArgument(format!(
                "density negative at point {x}: {d}"
            )));
        }
        masses.push(d.max(0.0) * m);
    }
    let mass: f64 = masses.iter().sum();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(CoreError::NotNormalized { mass, tol: 1e-9 });
    }
    // remove the normalization residue so supply and demand match exactly
    for v in &mut masses {
        *v /= mass;
    }
    Ok(masses)
}

pub(crate) struct TransportSolution {
    pub cost: f64,
    /// duality gap |primal - dual|; ~1e-12 on desk-scale instances
    pub gap: f64,
}

/// Min-cost transport of `a` onto `b` with cost d(x,y)^2.
pub(crate) fn solve_transport(s: &Space, a: &[f64], b: &[f64]) -> Result<TransportSolution> {
    let sources: Vec<usize> = (0..a.len()).filter(|&i| a[i] > MASS_EPS).collect();
    let sinks: Vec<usize> = (0..b.len()).filter(|&j| b[j] > MASS_EPS).collect();
    let ns = sources.len();
    let nt = sinks.len();
    if ns == 0 || nt == 0 {
        return Ok(TransportSolution { cost: 0.0, gap: 0.0 });
    }

    let cost = |si: usize, tj: usize| -> f64 {
        let d = s.distance(sources[si], sinks[tj]);
        d * d
    };

    let mut supply: Vec<f64> = sources.iter().map(|&i| a[i]).collect();
    let mut demand: Vec<f64> = sinks.iter().map(|&j| b[j]).collect();
    let mut flow = vec![vec![0.0_f64; nt]; ns];
    let mut u = vec![0.0_f64; ns];
    let mut v = vec![0.0_f64; nt];

    let max_rounds = 10 * (ns + nt) * (ns + nt) + 100;
    let mut rounds = 0;
    while supply.iter().sum::<f64>() > 1e-12 {
        rounds += 1;
        if rounds > max_rounds {
            return Err(CoreError::InvalidArgument(
                "transport solver exceeded its augmentation budget".into(),
            ));
        }

        // multi-source Dijkstra over reduced costs on the residual graph
        let mut dist_s = vec![f64::INFINITY; ns];
        let mut dist_t = vec![f64::INFINITY; nt];
        let mut done_s = vec![false; ns];
        let mut done_t = vec![false; nt];
        // parent of a sink is a source (forward arc); parent of a source is a sink (residual arc)
        let mut parent_t = vec![usize::MAX; nt];
        let mut parent_s = vec![usize::MAX; ns];
        for i in 0..ns {
            if supply[i] > MASS_EPS {
                dist_s[i] = 0.0;
            }
        }
        loop {
            // pick the unsettled node of smallest tentative distance
            let mut best = f64::INFINITY;
            let mut pick: Option<(bool, usize)> = None; // (is_source, index)
            for i in 0..ns {
                if !done_s[i] && dist_s[i] < best {
                    best = dist_s[i];
                    pick = Some((true, i));
                }
            }
            for j in 0..nt {
                if !done_t[j] && dist_t[j] < best {
                    best = dist_t[j];
                    pick = Some((false, j));
                }
            }
            let Some((is_source, k)) = pick else { break };
            if is_source {
                done_s[k] = true;
                for j in 0..nt {
                    if done_t[j] {
                        continue;
                    }
                    let rc = (cost(k, j) - u[k] - v[j]).max(0.0);
                    if dist_s[k] + rc < dist_t[j] {
                        dist_t[j] = dist_s[k] + rc;
                        parent_t[j] = k;
                    }
                }
            } else {
                done_t[k] = true;
                for i in 0..ns {
                    if done_s[i] || flow[i][k] <= MASS_EPS {
                        continue;
                    }
                    // residual arc; tight by complementary slackness
                    let rc = (u[i] + v[k] - cost(i, k)).max(0.0);
                    if dist_t[k] + rc < dist_s[i] {
                        dist_s[i] = dist_t[k] + rc;
                        parent_s[i] = k;
                    }
                }
            }
        }

        let target = (0..nt)
            .filter(|&j| demand[j] > MASS_EPS && dist_t[j].is_finite())
            .min_by(|&x, &y| dist_t[x].total_cmp(&dist_t[y]));
        let Some(target) = target else {
            return Err(CoreError::InvalidArgument(
                "transport solver found no augmenting path (unbalanced marginals?)".into(),
            ));
        };
        let reach = dist_t[target];

        // walk the path back to its root source; roots are the seeded
        // sources and are exactly the ones never relaxed via a residual arc
        let mut forwards = Vec::new(); // arcs gaining flow
        let mut backs = Vec::new(); // residual arcs losing flow
        let mut j = target;
        let start = loop {
            let i = parent_t[j];
            forwards.push((i, j));
            if parent_s[i] == usize::MAX {
                break i;
            }
            let back_j = parent_s[i];
            backs.push((i, back_j));
            j = back_j;
        };

        let mut bottleneck = supply[start].min(demand[target]);
        for &(i, jj) in &backs {
            bottleneck = bottleneck.min(flow[i][jj]);
        }

        // Johnson potential update keeps all reduced costs nonnegative
        for i in 0..ns {
            u[i] -= dist_s[i].min(reach);
        }
        for jj in 0..nt {
            v[jj] += dist_t[jj].min(reach);
        }

        for &(i, jj) in &forwards {
            flow[i][jj] += bottleneck;
        }
        for &(i, jj) in &backs {
            flow[i][jj] -= bottleneck;
        }
        supply[start] -= bottleneck;
        demand[target] -= bottleneck;
    }

    let mut primal = 0.0;
    for i in 0..ns {
        for j in 0..nt {
            primal += flow[i][j] * cost(i, j);
        }
    }
    let dual: f64 = sources
        .iter()
        .enumerate()
        .map(|(i, &x)| a[x] * u[i])
        .chain(sinks.iter().enumerate().map(|(j, &y)| b[y] * v[j]))
        .sum();
    Ok(TransportSolution { cost: primal, gap: (primal - dual).abs() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{build_space, two_point_space, SpaceKind, SpaceSpec};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn path3_space() -> Space {
        // 0 -- 1 -- 2 with unit edges, d(0,2) = 2
        let c = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let metric = crate::space::shortest_path_metric(&c, 1.0).unwrap();
        Space::new(
            vec!["0".into(), "1".into(), "2".into()],
            None,
            metric,
            vec![1.0 / 3.0; 3],
            c,
        )
        .unwrap()
    }

    fn random_density(s: &Space, rng: &mut ChaCha8Rng) -> Field {
        let raw: Vec<f64> = (0..s.n()).map(|_| rng.gen_range(0.01..1.0)).collect();
        let mass: f64 = raw.iter().zip(s.measure()).map(|(r, m)| r * m).sum();
        Field::new(raw.into_iter().map(|r| r / mass).collect()).unwrap()
    }

    #[test]
    fn identical_densities_have_zero_distance() {
        let s = build_space(&SpaceSpec::new(SpaceKind::Cycle { n: 8 })).unwrap();
        let p = Field::constant(8, 1.0);
        assert_eq!(wasserstein2(&s, &p, &p).unwrap(), 0.0);
    }

    #[test]
    fn two_point_deltas() {
        let s = two_point_space();
        // densities of the point masses with respect to m = (1/2, 1/2)
        let p = Field::new(vec![2.0, 0.0]).unwrap();
        let q = Field::new(vec![0.0, 2.0]).unwrap();
        assert_abs_diff_eq!(wasserstein2(&s, &p, &q).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cycle_split_target() {
        // delta_0 against (delta_1 + delta_7)/2: both targets one edge away
        let n = 8;
        let s = build_space(&SpaceSpec::new(SpaceKind::Cycle { n })).unwrap();
        let nf = n as f64;
        let p = Field::from_fn(n, |x| if x == 0 { nf } else { 0.0 });
        let q = Field::from_fn(n, |x| if x == 1 || x == 7 { nf / 2.0 } else { 0.0 });
        let d01 = s.distance(0, 1);
        let w = wasserstein2(&s, &p, &q).unwrap();
        assert_abs_diff_eq!(w * w, d01 * d01, epsilon = 1e-12);
    }

    #[test]
    fn squared_cost_prefers_intermediate_moves() {
        // on the path 0-1-2, splitting through the middle beats the direct
        // move because the cost is the squared distance
        let s = path3_space();
        let p = Field::new(vec![1.5, 1.5, 0.0]).unwrap();
        let q = Field::new(vec![0.0, 1.5, 1.5]).unwrap();
        let w = wasserstein2(&s, &p, &q).unwrap();
        assert_abs_diff_eq!(w * w, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn optimality_certificate_on_random_instances() {
        let s = build_space(&SpaceSpec::new(SpaceKind::Cycle { n: 12 })).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..25 {
            let p = random_density(&s, &mut rng);
            let q = random_density(&s, &mut rng);
            let a: Vec<f64> = p.values().iter().zip(s.measure()).map(|(d, m)| d * m).collect();
            let b: Vec<f64> = q.values().iter().zip(s.measure()).map(|(d, m)| d * m).collect();
            let sol = solve_transport(&s, &a, &b).unwrap();
            assert!(sol.gap <= 1e-9 * (1.0 + sol.cost), "gap {}", sol.gap);
            // symmetry of the distance
            let sol_rev = solve_transport(&s, &b, &a).unwrap();
            assert_abs_diff_eq!(sol.cost, sol_rev.cost, epsilon = 1e-10);
        }
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let s = crate::space::random_connected_space(10, 99).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..15 {
            let p = random_density(&s, &mut rng);
            let q = random_density(&s, &mut rng);
            let r = random_density(&s, &mut rng);
            let pq = wasserstein2(&s, &p, &q).unwrap();
            let qr = wasserstein2(&s, &q, &r).unwrap();
            let pr = wasserstein2(&s, &p, &r).unwrap();
            assert!(pr <= pq + qr + 1e-9);
        }
    }

    #[test]
    fn rejects_unnormalized_marginals() {
        let s = two_point_space();
        let p = Field::new(vec![1.0, 0.5]).unwrap();
        let q = Field::new(vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            wasserstein2(&s, &p, &q),
            Err(CoreError::NotNormalized { .. })
        ));
    }
}
