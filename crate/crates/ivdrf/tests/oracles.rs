//! Enumeration oracles: on fully enumerated discrete instances, the score
//! functions must identify the true curve exactly, single nuisance errors
//! must cancel, and paired errors must shrink as their product.

use std::sync::Arc;

use ivdrf::nuisance::{NuisanceVector, PointFn, WeightingFunction};
use ivdrf::scores::{
    aipw_score, degenerate_score, ipw_score, multicat_score, nuc_scores, or_score, ScoreInput,
};
use ivdrf::sim::{toys, DiscreteToy};

fn conditional_mean<F>(toy: &DiscreteToy, pi: &WeightingFunction, ia: usize, score: F) -> f64
where
    F: Fn(ScoreInput) -> f64,
{
    toy.conditional_score_mean(pi, ia, score).unwrap()
}

fn unconditional_mean<F>(toy: &DiscreteToy, pi: &WeightingFunction, score: F) -> f64
where
    F: Fn(ScoreInput) -> f64,
{
    toy.unconditional_score_mean(pi, score).unwrap()
}

fn all_toys() -> Vec<(&'static str, DiscreteToy, WeightingFunction)> {
    vec![
        (
            "binary-ternary",
            toys::aiv_binary_ternary(),
            WeightingFunction::raw_coordinate(0),
        ),
        (
            "ternary-z-no-l",
            toys::aiv_ternary_z_no_l(),
            WeightingFunction::raw_coordinate(0),
        ),
        (
            "signed-treatment",
            toys::aiv_signed_treatment(),
            WeightingFunction::raw_coordinate(0),
        ),
    ]
}

#[test]
fn aipw_identifies_theta_on_all_instances() {
    for (name, toy, pi) in all_toys() {
        let alpha = toy.exact_nuisances(&pi).unwrap();
        let emp = toy.population_emp(&pi).unwrap();
        for ia in 0..toy.a_levels.len() {
            let theta = toy.theta(ia);
            let got = conditional_mean(&toy, &pi, ia, |o| aipw_score(o, &alpha, &emp));
            assert!(
                (got - theta).abs() <= 1e-10,
                "{name}: E[phi | A = {}] = {got}, theta = {theta}",
                toy.a_levels[ia]
            );
        }
    }
}

#[test]
fn ipw_and_or_identify_theta_on_all_instances() {
    for (name, toy, pi) in all_toys() {
        let alpha = toy.exact_nuisances(&pi).unwrap();
        let emp = toy.population_emp(&pi).unwrap();
        for ia in 0..toy.a_levels.len() {
            let theta = toy.theta(ia);
            let ipw = conditional_mean(&toy, &pi, ia, |o| ipw_score(o, &alpha));
            let or = conditional_mean(&toy, &pi, ia, |o| or_score(o, &alpha, &emp));
            assert!((ipw - theta).abs() <= 1e-10, "{name} ipw: {ipw} vs {theta}");
            assert!((or - theta).abs() <= 1e-10, "{name} or: {or} vs {theta}");
        }
    }
}

#[test]
fn degenerate_score_identifies_theta() {
    let toy = toys::aiv_ternary_z_no_l();
    let pi = WeightingFunction::raw_coordinate(0);
    let deg = toy.exact_degenerate(&pi).unwrap();
    let emp = toy.population_emp(&pi).unwrap();
    for ia in 0..toy.a_levels.len() {
        let theta = toy.theta(ia);
        let got = conditional_mean(&toy, &pi, ia, |o| {
            degenerate_score(o, &deg, &emp).unwrap()
        });
        assert!(
            (got - theta).abs() <= 1e-10,
            "degenerate: E[phi | A = {}] = {got}, theta = {theta}",
            toy.a_levels[ia]
        );
    }
}

#[test]
fn degenerate_equals_general_score_without_covariates() {
    let toy = toys::aiv_ternary_z_no_l();
    let pi = WeightingFunction::raw_coordinate(0);
    let alpha = toy.exact_nuisances(&pi).unwrap();
    let deg = toy.exact_degenerate(&pi).unwrap();
    let emp = toy.population_emp(&pi).unwrap();
    for ia in 0..toy.a_levels.len() {
        for iz in 0..toy.z_levels.len() {
            for iu in 0..toy.u_levels.len() {
                let o = ScoreInput {
                    a: toy.a_levels[ia],
                    y: toy.y_at(0, iu, ia),
                    z_pi: pi.eval(&toy.z_levels[iz], &[]).unwrap(),
                    l: &[],
                };
                let general = aipw_score(o, &alpha, &emp);
                let degenerate = degenerate_score(o, &deg, &emp).unwrap();
                assert!(
                    (general - degenerate).abs() < 1e-8,
                    "general {general} vs degenerate {degenerate}"
                );
            }
        }
    }
}

#[test]
fn multicat_score_identifies_theta() {
    for (name, toy, pi) in all_toys() {
        let alpha = toy.exact_nuisances(&pi).unwrap();
        let delta = toy.exact_propensity();
        for ia in 0..toy.a_levels.len() {
            let target = toy.a_levels[ia];
            let theta = toy.theta(ia);
            let got = unconditional_mean(&toy, &pi, |o| {
                multicat_score(o, &alpha, target, &|a, l| delta(a, l)).unwrap()
            });
            assert!(
                (got - theta).abs() <= 1e-10,
                "{name} multicat at {target}: {got} vs {theta}"
            );
        }
    }
}

#[test]
fn nuc_scores_identify_theta_without_confounding() {
    // instrument equal to the treatment, no latent confounder: the
    // instrument-based and confounding-free scores must agree
    let toy = toys::unconfounded_z_equals_a();
    let pi = WeightingFunction::raw_coordinate(0);
    let alpha = toy.exact_nuisances(&pi).unwrap();
    let emp = toy.population_emp(&pi).unwrap();
    for ia in 0..toy.a_levels.len() {
        let theta = toy.theta(ia);
        let iv = conditional_mean(&toy, &pi, ia, |o| aipw_score(o, &alpha, &emp));
        let nuc = conditional_mean(&toy, &pi, ia, |o| nuc_scores(o, &alpha, &emp).0);
        assert!((iv - theta).abs() <= 1e-10, "iv: {iv} vs {theta}");
        assert!((nuc - theta).abs() <= 1e-10, "nuc: {nuc} vs {theta}");
        assert!((iv - nuc).abs() <= 1e-8);
    }
}

#[test]
fn rwf_invariance_across_weighting_functions() {
    // two different valid weighting functions give the same identification
    let toy = toys::aiv_ternary_z_no_l();
    let pi_linear = WeightingFunction::raw_coordinate(0);
    let pi_quadratic = WeightingFunction::polynomial(0, 2);
    let alpha1 = toy.exact_nuisances(&pi_linear).unwrap();
    let alpha2 = toy.exact_nuisances(&pi_quadratic).unwrap();
    let emp1 = toy.population_emp(&pi_linear).unwrap();
    let emp2 = toy.population_emp(&pi_quadratic).unwrap();
    for ia in 0..toy.a_levels.len() {
        let m1 = conditional_mean(&toy, &pi_linear, ia, |o| aipw_score(o, &alpha1, &emp1));
        let m2 = conditional_mean(&toy, &pi_quadratic, ia, |o| aipw_score(o, &alpha2, &emp2));
        assert!((m1 - m2).abs() <= 1e-8, "{m1} vs {m2}");
    }
}

#[test]
fn psi_q_matches_enumerated_estimand() {
    let toy = toys::aiv_binary_ternary();
    let pi = WeightingFunction::raw_coordinate(0);
    let alpha = toy.exact_nuisances(&pi).unwrap();
    let emp = toy.population_emp(&pi).unwrap();
    // uniform q over the categories
    let q = 1.0 / toy.a_levels.len() as f64;
    // psi = sum_a q(a) p_A(a) sum_l p(l) mu(a, l)
    let mut psi = 0.0;
    for ia in 0..toy.a_levels.len() {
        let mut mu_bar = 0.0;
        for il in 0..toy.l_levels.len() {
            mu_bar += toy.p_l[il] * alpha.mu(toy.a_levels[ia], &toy.l_levels[il]);
        }
        psi += q * toy.p_a(ia) * mu_bar;
    }
    let est = unconditional_mean(&toy, &pi, |o| q * aipw_score(o, &alpha, &emp));
    assert!((est - psi).abs() <= 1e-10, "psi {est} vs {psi}");
}

// --- mixed bias ---

struct Perturbation {
    mu: f64,
    rho: f64,
    kappa: f64,
    eta: f64,
    delta: f64,
}

impl Perturbation {
    fn none() -> Self {
        Perturbation {
            mu: 0.0,
            rho: 0.0,
            kappa: 0.0,
            eta: 0.0,
            delta: 0.0,
        }
    }
}

/// Applies smooth perturbations of size `eps` to selected components.
fn perturb(toy: &DiscreteToy, pi: &WeightingFunction, p: &Perturbation) -> NuisanceVector {
    let base = toy.exact_nuisances(pi).unwrap();
    let f_al = |a: f64, l: &[f64]| 0.5 + 0.15 * a - 0.2 * l.first().copied().unwrap_or(0.0);
    let g_al = |a: f64, l: &[f64]| 0.3 - 0.1 * a + 0.25 * l.first().copied().unwrap_or(0.0);
    let h_l = |l: &[f64]| 0.4 + 0.3 * l.first().copied().unwrap_or(0.0);

    let mu: PointFn = {
        let b = base.clone();
        let e = p.mu;
        Arc::new(move |a, l| b.mu(a, l) + e * f_al(a, l))
    };
    let rho = {
        let b = base.clone();
        let e = p.rho;
        Arc::new(move |l: &[f64]| b.rho(l) + e * h_l(l))
    };
    let kappa: PointFn = {
        let b = base.clone();
        let e = p.kappa;
        // multiplicative so the sign never flips
        Arc::new(move |a, l| b.kappa(a, l) * (1.0 + e * (0.5 + 0.2 * a)))
    };
    let eta: PointFn = {
        let b = base.clone();
        let e = p.eta;
        Arc::new(move |a, l| b.eta(a, l) + e * g_al(a, l))
    };
    let delta: PointFn = {
        let b = base.clone();
        let e = p.delta;
        Arc::new(move |a, l| b.delta(a, l) + e * f_al(a, l).abs())
    };
    NuisanceVector::exact(mu, rho, kappa, eta, delta)
}

/// Conditional bias `E[phi(alpha~) | A = a] - E_L[mu(a, L)]` by enumeration.
fn conditional_bias(
    toy: &DiscreteToy,
    pi: &WeightingFunction,
    alpha: &NuisanceVector,
    ia: usize,
) -> f64 {
    let exact = toy.exact_nuisances(pi).unwrap();
    let emp = toy.population_emp(pi).unwrap();
    let mut mu_bar = 0.0;
    for il in 0..toy.l_levels.len() {
        mu_bar += toy.p_l[il] * exact.mu(toy.a_levels[ia], &toy.l_levels[il]);
    }
    conditional_mean(toy, pi, ia, |o| aipw_score(o, alpha, &emp)) - mu_bar
}

/// The three closed-form bias terms, enumerated over `p(l | a)`.
fn theorem_bias(
    toy: &DiscreteToy,
    pi: &WeightingFunction,
    alpha: &NuisanceVector,
    ia: usize,
) -> f64 {
    let exact = toy.exact_nuisances(pi).unwrap();
    let a = toy.a_levels[ia];
    let pa = toy.p_a(ia);
    let mut acc = 0.0;
    for il in 0..toy.l_levels.len() {
        let l = &toy.l_levels[il];
        let w = toy.p_l[il] * toy.p_a_given_l(il, ia) / pa; // p(l | a)
        let (mu_t, rho_t, k_t, eta_t, d_t) = (
            alpha.mu(a, l),
            alpha.rho(l),
            alpha.kappa(a, l),
            alpha.eta(a, l),
            alpha.delta(a, l),
        );
        let (mu_o, rho_o, k_o, eta_o, d_o) = (
            exact.mu(a, l),
            exact.rho(l),
            exact.kappa(a, l),
            exact.eta(a, l),
            exact.delta(a, l),
        );
        let term1 = d_t / k_t * (rho_t - rho_o) * (eta_t - eta_o);
        let term2 = (d_o - d_t * k_o / k_t) * (mu_t - mu_o);
        let term3 = (rho_t - rho_o) * (d_o - d_t) * (eta_t - mu_t) / k_t;
        acc += w * (term1 + term2 + term3);
    }
    acc
}

#[test]
fn conditional_bias_matches_closed_form_decomposition() {
    let toy = toys::aiv_binary_ternary();
    let pi = WeightingFunction::raw_coordinate(0);
    let p = Perturbation {
        mu: 0.17,
        rho: -0.23,
        kappa: 0.11,
        eta: 0.31,
        delta: 0.19,
    };
    let alpha = perturb(&toy, &pi, &p);
    for ia in 0..toy.a_levels.len() {
        let measured = conditional_bias(&toy, &pi, &alpha, ia);
        let predicted = theorem_bias(&toy, &pi, &alpha, ia);
        assert!(
            (measured - predicted).abs() <= 1e-10,
            "a = {}: measured {measured} vs closed form {predicted}",
            toy.a_levels[ia]
        );
    }
}

#[test]
fn single_component_perturbations_leave_zero_bias() {
    let toy = toys::aiv_binary_ternary();
    let pi = WeightingFunction::raw_coordinate(0);
    let cases = [
        ("rho", Perturbation {
            rho: 0.3,
            ..Perturbation::none()
        }),
        ("mu", Perturbation {
            mu: 0.3,
            ..Perturbation::none()
        }),
        ("eta", Perturbation {
            eta: 0.3,
            ..Perturbation::none()
        }),
        ("kappa (mu correct)", Perturbation {
            kappa: 0.3,
            ..Perturbation::none()
        }),
        ("delta (mu, rho correct)", Perturbation {
            delta: 0.3,
            ..Perturbation::none()
        }),
    ];
    for (name, p) in cases {
        let alpha = perturb(&toy, &pi, &p);
        for ia in 0..toy.a_levels.len() {
            let bias = conditional_bias(&toy, &pi, &alpha, ia);
            assert!(
                bias.abs() <= 1e-10,
                "{name}: bias {bias} at a = {}",
                toy.a_levels[ia]
            );
        }
    }
}

#[test]
fn paired_perturbations_shrink_quadratically() {
    let toy = toys::aiv_binary_ternary();
    let pi = WeightingFunction::raw_coordinate(0);
    let pairs: [(&str, Box<dyn Fn(f64) -> Perturbation>); 4] = [
        (
            "(rho, eta)",
            Box::new(|e| Perturbation {
                rho: e,
                eta: e,
                ..Perturbation::none()
            }),
        ),
        (
            "(mu, kappa)",
            Box::new(|e| Perturbation {
                mu: e,
                kappa: e,
                ..Perturbation::none()
            }),
        ),
        (
            "(mu, delta)",
            Box::new(|e| Perturbation {
                mu: e,
                delta: e,
                ..Perturbation::none()
            }),
        ),
        (
            "(rho, delta)",
            Box::new(|e| Perturbation {
                rho: e,
                delta: e,
                ..Perturbation::none()
            }),
        ),
    ];
    let eps = [0.2, 0.1, 0.05, 0.025];
    for (name, make) in &pairs {
        // average |bias| over treatment levels at each perturbation size
        let mut logs = Vec::new();
        for &e in &eps {
            let alpha = perturb(&toy, &pi, &make(e));
            let mut total = 0.0;
            for ia in 0..toy.a_levels.len() {
                total += conditional_bias(&toy, &pi, &alpha, ia).abs();
            }
            assert!(total > 0.0, "{name}: no bias signal at eps = {e}");
            logs.push((e.ln(), (total / toy.a_levels.len() as f64).ln()));
        }
        // least-squares slope on the log-log points
        let n = logs.len() as f64;
        let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
        let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let slope = sxy / sxx;
        assert!(
            (slope - 2.0).abs() <= 0.3,
            "{name}: log-log slope {slope}"
        );
    }
}

#[test]
fn degenerate_mixed_bias_mu_perturbation_cancels() {
    // with the relevance signal correct, perturbing the ratio component
    // alone leaves no conditional bias in the degenerate score
    let toy = toys::aiv_ternary_z_no_l();
    let pi = WeightingFunction::raw_coordinate(0);
    let exact = toy.exact_degenerate(&pi).unwrap();
    let rho = exact.rho;
    let perturbed = {
        let e = exact.clone();
        ivdrf::nuisance::DegenerateNuisance::new(
            rho,
            Arc::new(move |a| e.mu(a) + 0.4 + 0.1 * a),
            {
                let e = exact.clone();
                Arc::new(move |a| e.kappa(a))
            },
            {
                let e = exact.clone();
                Arc::new(move |a| e.lambda(a))
            },
            1e-300,
        )
    };
    let emp = toy.population_emp(&pi).unwrap();
    for ia in 0..toy.a_levels.len() {
        let mu_o = exact.mu(toy.a_levels[ia]);
        let got = conditional_mean(&toy, &pi, ia, |o| {
            degenerate_score(o, &perturbed, &emp).unwrap()
        });
        assert!(
            (got - mu_o).abs() <= 1e-10,
            "bias {} at a = {}",
            got - mu_o,
            toy.a_levels[ia]
        );
    }
}
