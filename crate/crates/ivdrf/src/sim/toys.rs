//! Canonical discrete instances used by the oracle test suites and the
//! command-line `discrete_toy` variant.

use super::toy::DiscreteToy;

/// Binary instrument, ternary treatment, binary covariate, binary
/// confounder; treatment table additive by mixture construction.
pub fn aiv_binary_ternary() -> DiscreteToy {
    DiscreteToy::additive_mixture(
        vec![vec![-0.5], vec![0.5]],
        vec![-1.0, 1.0],
        vec![vec![0.0], vec![1.0]],
        vec![0.0, 1.0, 2.0],
        vec![0.5, 0.5],
        vec![vec![0.6, 0.4], vec![0.3, 0.7]],
        vec![vec![0.5, 0.5], vec![0.4, 0.6]],
        vec![0.6, 0.5],
        vec![
            vec![vec![0.5, 0.35, 0.15], vec![0.2, 0.25, 0.55]],
            vec![vec![0.6, 0.25, 0.15], vec![0.1, 0.35, 0.55]],
        ],
        vec![
            vec![vec![0.4, 0.4, 0.2], vec![0.2, 0.3, 0.5]],
            vec![vec![0.5, 0.3, 0.2], vec![0.2, 0.2, 0.6]],
        ],
        y_linear(&[vec![-0.5], vec![0.5]], &[-1.0, 1.0], &[0.0, 1.0, 2.0], 1.0, 0.8, 0.5),
    )
    .expect("valid instance")
}

/// Ternary instrument, binary treatment, no covariates, ternary confounder.
pub fn aiv_ternary_z_no_l() -> DiscreteToy {
    DiscreteToy::additive_mixture(
        vec![vec![]],
        vec![-1.0, 0.0, 1.0],
        vec![vec![-1.0], vec![0.0], vec![1.0]],
        vec![0.0, 1.0],
        vec![1.0],
        vec![vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]],
        vec![vec![0.3, 0.4, 0.3]],
        vec![0.55],
        vec![vec![vec![0.7, 0.3], vec![0.5, 0.5], vec![0.2, 0.8]]],
        vec![vec![vec![0.6, 0.4], vec![0.5, 0.5], vec![0.3, 0.7]]],
        y_linear(&[vec![]], &[-1.0, 0.0, 1.0], &[0.0, 1.0], 1.5, 0.7, 0.0),
    )
    .expect("valid instance")
}

/// Binary instrument, ternary treatment on a signed support, binary
/// covariate, ternary confounder.
pub fn aiv_signed_treatment() -> DiscreteToy {
    DiscreteToy::additive_mixture(
        vec![vec![0.0], vec![1.0]],
        vec![-1.0, 0.0, 1.0],
        vec![vec![0.0], vec![1.0]],
        vec![-1.0, 0.0, 1.0],
        vec![0.4, 0.6],
        vec![vec![0.2, 0.5, 0.3], vec![0.4, 0.3, 0.3]],
        vec![vec![0.6, 0.4], vec![0.5, 0.5]],
        vec![0.7, 0.65],
        vec![
            vec![vec![0.5, 0.3, 0.2], vec![0.15, 0.35, 0.5]],
            vec![vec![0.45, 0.35, 0.2], vec![0.25, 0.25, 0.5]],
        ],
        vec![
            vec![vec![0.4, 0.3, 0.3], vec![0.3, 0.4, 0.3], vec![0.2, 0.3, 0.5]],
            vec![vec![0.5, 0.25, 0.25], vec![0.35, 0.3, 0.35], vec![0.25, 0.35, 0.4]],
        ],
        y_quadratic(&[vec![0.0], vec![1.0]], &[-1.0, 0.0, 1.0], &[-1.0, 0.0, 1.0]),
    )
    .expect("valid instance")
}

/// Multiplicative instrument-confounder interaction in the treatment table.
pub fn multiplicative_toy() -> DiscreteToy {
    DiscreteToy::multiplicative(
        vec![vec![0.0], vec![1.0]],
        vec![-1.0, 1.0],
        vec![vec![0.0], vec![1.0]],
        vec![0.0, 1.0, 2.0],
        vec![0.5, 0.5],
        vec![vec![0.5, 0.5], vec![0.45, 0.55]],
        vec![vec![0.5, 0.5], vec![0.6, 0.4]],
        vec![
            vec![vec![0.5, 0.3, 0.2], vec![0.2, 0.35, 0.45]],
            vec![vec![0.55, 0.25, 0.2], vec![0.15, 0.35, 0.5]],
        ],
        vec![
            vec![vec![0.5, 0.3, 0.2], vec![0.2, 0.4, 0.4]],
            vec![vec![0.45, 0.35, 0.2], vec![0.25, 0.3, 0.45]],
        ],
        y_linear(&[vec![0.0], vec![1.0]], &[-1.0, 1.0], &[0.0, 1.0, 2.0], 1.0, 0.6, -0.4),
    )
    .expect("valid instance")
}

/// Multiplicative table with a single confounder level; the interaction
/// collapses and the comparison weight is identically one.
pub fn multiplicative_toy_constant_u() -> DiscreteToy {
    DiscreteToy::multiplicative(
        vec![vec![0.0]],
        vec![0.0],
        vec![vec![0.0], vec![1.0]],
        vec![0.0, 1.0],
        vec![1.0],
        vec![vec![1.0]],
        vec![vec![0.5, 0.5]],
        vec![vec![vec![0.7, 0.3], vec![0.3, 0.7]]],
        vec![vec![vec![0.5, 0.5]]],
        vec![vec![vec![0.4, 1.2]]],
    )
    .expect("valid instance")
}

/// No treatment effect: the outcome ignores the treatment level.
pub fn flat_toy() -> DiscreteToy {
    DiscreteToy::additive_mixture(
        vec![vec![0.0]],
        vec![-1.0, 1.0],
        vec![vec![0.0], vec![1.0]],
        vec![0.0, 1.0],
        vec![1.0],
        vec![vec![0.5, 0.5]],
        vec![vec![0.5, 0.5]],
        vec![0.5],
        vec![vec![vec![0.7, 0.3], vec![0.3, 0.7]]],
        vec![vec![vec![0.5, 0.5], vec![0.4, 0.6]]],
        vec![vec![vec![0.5, 0.5], vec![2.5, 2.5]]], // y = 1.5 + u
    )
    .expect("valid instance")
}

/// Confounder-free instance where the instrument levels coincide with the
/// treatment levels and assignment is `A = Z` exactly.
pub fn unconfounded_z_equals_a() -> DiscreteToy {
    // q(a | z) = indicator(a = z); the single confounder level contributes
    // nothing (mixture weight one on the z-part)
    DiscreteToy::additive_mixture(
        vec![vec![0.0], vec![1.0]],
        vec![0.0],
        vec![vec![0.0], vec![1.0], vec![2.0]],
        vec![0.0, 1.0, 2.0],
        vec![0.45, 0.55],
        vec![vec![1.0], vec![1.0]],
        vec![vec![0.5, 0.3, 0.2], vec![0.25, 0.35, 0.4]],
        vec![1.0, 1.0],
        vec![
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
        ],
        vec![
            vec![vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]],
            vec![vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]],
        ],
        vec![
            vec![vec![0.5, 1.8, 2.2]],
            vec![vec![1.1, 2.4, 3.6]],
        ],
    )
    .expect("valid instance")
}

fn y_linear(
    l_levels: &[Vec<f64>],
    u_levels: &[f64],
    a_levels: &[f64],
    ca: f64,
    cu: f64,
    cl: f64,
) -> Vec<Vec<Vec<f64>>> {
    l_levels
        .iter()
        .map(|l| {
            let lsum: f64 = l.iter().sum();
            u_levels
                .iter()
                .map(|&u| a_levels.iter().map(|&a| ca * a + cu * u + cl * lsum).collect())
                .collect()
        })
        .collect()
}

fn y_quadratic(l_levels: &[Vec<f64>], u_levels: &[f64], a_levels: &[f64]) -> Vec<Vec<Vec<f64>>> {
    l_levels
        .iter()
        .map(|l| {
            let lsum: f64 = l.iter().sum();
            u_levels
                .iter()
                .map(|&u| {
                    a_levels
                        .iter()
                        .map(|&a| a * a + 0.5 * a - 0.6 * u + 0.3 * lsum)
                        .collect()
                })
                .collect()
        })
        .collect()
}
