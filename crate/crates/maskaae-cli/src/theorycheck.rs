//! The `theory-check` battery: a fixed set of numerical checks on the
//! covering-volume machinery and the kNN cross-entropy proxy, reported
//! as JSON. Everything here is deterministic (fixed seeds), so the
//! report is reproducible byte for byte.

use maskaae::rng::{normal_matrix, stream_rng, Stream};
use maskaae::theory::{
    covering_completeness, estimate_cross_entropy_proxy, image_volume_estimate, lemma1_constant,
    lemma1_volume_bound, subspace_samples, CoveringSpec,
};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

fn spec(alpha: u32, beta: u32, lipschitz: f64, epsilon: u32) -> CoveringSpec {
    CoveringSpec { alpha, beta, lipschitz, epsilon }
}

/// Run every check; never panics — a computation error becomes a failed
/// check with the error text in `detail`.
pub fn run_battery() -> Report {
    let mut checks = Vec::new();

    // Closed-form constants. A 1-Lipschitz map from [0,1] into the
    // plane has c = π; into the line, c = 2.
    checks.push(match lemma1_constant(&spec(1, 2, 1.0, 1)) {
        Ok(c) => {
            let err = (c - std::f64::consts::PI).abs();
            Check {
                name: "constant_unit_disc".into(),
                pass: err < 1e-12,
                value: c,
                detail: format!("|c - π| = {err:.3e}"),
            }
        }
        Err(e) => fail("constant_unit_disc", e),
    });
    checks.push(match lemma1_constant(&spec(1, 1, 1.0, 1)) {
        Ok(c) => Check {
            name: "constant_interval".into(),
            pass: (c - 2.0).abs() < 1e-12,
            value: c,
            detail: format!("|c - 2| = {:.3e}", (c - 2.0).abs()),
        },
        Err(e) => fail("constant_interval", e),
    });
    checks.push(match lemma1_volume_bound(&spec(1, 2, 1.0, 10)) {
        Ok(b) => {
            let want = std::f64::consts::PI / 10.0;
            Check {
                name: "volume_bound_eps10".into(),
                pass: (b - want).abs() < 1e-12,
                value: b,
                detail: format!("|bound - π/10| = {:.3e}", (b - want).abs()),
            }
        }
        Err(e) => fail("volume_bound_eps10", e),
    });

    // The grid really covers the cube: 1e5 uniform probes per geometry,
    // every probe within √α/(2ε) of some cell center.
    for alpha in [1u32, 2, 3] {
        for epsilon in [2u32, 4, 8] {
            let name = format!("covering_a{alpha}_e{epsilon}");
            let bound = (alpha as f64).sqrt() / (2.0 * epsilon as f64);
            checks.push(match covering_completeness(alpha, epsilon, 100_000, 7) {
                Ok(max_dist) => Check {
                    name,
                    pass: true,
                    value: max_dist,
                    detail: format!("worst probe {max_dist:.6} ≤ bound {bound:.6}"),
                },
                Err(e) => fail(&name, e),
            });
        }
    }

    // A degenerate (1-dimensional) image in ℝ² has an ε-cover whose
    // volume estimate stays under the closed-form bound and shrinks as
    // the grid refines.
    let embed = |u: &[f64]| {
        let s = u[0] / 2f64.sqrt();
        vec![s, s]
    };
    let mut shrink_detail = Vec::new();
    let mut shrink_pass = true;
    let mut prev = f64::INFINITY;
    let mut last = f64::NAN;
    for epsilon in [4u32, 8, 16] {
        match (
            image_volume_estimate(embed, 1, epsilon, 64, 2),
            lemma1_volume_bound(&spec(1, 2, 1.0, epsilon)),
        ) {
            (Ok(est), Ok(bound)) => {
                let ok = est <= bound && est < prev;
                shrink_pass &= ok;
                shrink_detail.push(format!("ε={epsilon}: est {est:.5} bound {bound:.5}"));
                prev = est;
                last = est;
            }
            (Err(e), _) | (_, Err(e)) => {
                shrink_pass = false;
                shrink_detail.push(format!("ε={epsilon}: {e}"));
            }
        }
    }
    checks.push(Check {
        name: "image_volume_shrinks".into(),
        pass: shrink_pass,
        value: last,
        detail: shrink_detail.join("; "),
    });

    // Matched standard normals in ℝ⁴: the kNN proxy should land within
    // 15% of the analytic cross entropy 2·ln(2πe).
    {
        let mut rng = stream_rng(11, Stream::Custom(0xCE00));
        let prior = normal_matrix(&mut rng, 5000, 4);
        let encoded = normal_matrix(&mut rng, 5000, 4);
        let analytic = 2.0 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        checks.push(match estimate_cross_entropy_proxy(&prior, &encoded, 5) {
            Ok(est) => {
                let rel = (est - analytic).abs() / analytic;
                Check {
                    name: "cross_entropy_matched".into(),
                    pass: rel < 0.15,
                    value: est,
                    detail: format!("analytic {analytic:.4}, relative error {rel:.4}"),
                }
            }
            Err(e) => fail("cross_entropy_matched", e),
        });
    }

    // Samples supported on a 4-dimensional slice of ℝ^m drift further
    // from a full m-dimensional prior as m grows: median proxy over 10
    // repeats strictly increasing in m, consecutive gaps ≥ 2 nats.
    {
        let mut medians = Vec::new();
        let mut growth_detail = Vec::new();
        let mut errored = false;
        for m in [4usize, 8, 16] {
            let mut vals = Vec::new();
            for rep in 0..10u64 {
                let mut rng = stream_rng(77, Stream::Custom(0xCE10 + rep));
                let prior = normal_matrix(&mut rng, 2000, m);
                match subspace_samples(2000, m, 4, &mut rng)
                    .and_then(|enc| estimate_cross_entropy_proxy(&prior, &enc, 5))
                {
                    Ok(v) => vals.push(v),
                    Err(e) => {
                        growth_detail.push(format!("m={m} rep {rep}: {e}"));
                        errored = true;
                    }
                }
            }
            let med = crate::sweep::median(&mut vals);
            growth_detail.push(format!("m={m}: median {med:.3}"));
            medians.push(med);
        }
        let ordered = !errored
            && medians.windows(2).all(|w| w[1] > w[0] && w[1] - w[0] >= 2.0);
        checks.push(Check {
            name: "cross_entropy_grows_with_mismatch".into(),
            pass: ordered,
            value: *medians.last().unwrap_or(&f64::NAN),
            detail: growth_detail.join("; "),
        });
    }

    let all_pass = checks.iter().all(|c| c.pass);
    Report { checks, all_pass }
}

fn fail(name: &str, e: maskaae::MaaeError) -> Check {
    Check {
        name: name.into(),
        pass: false,
        value: f64::NAN,
        detail: format!("error: {e}"),
    }
}

pub fn render(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}
