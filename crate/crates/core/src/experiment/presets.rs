//! Named experiment grids at desk scale.

use super::config::{Method, ProblemConfig, RunConfig, SurrogateConfig, Sweep};
use crate::error::{Error, Result};
use crate::surrogate::SurrogateKind;

pub const PRESETS: [&str; 5] = ["fig-when-converge", "fig-surrogates", "fig-pdmp-vs-nuts", "appendix-a", "appendix-b"];

const DIMS: [usize; 3] = [2, 5, 10];

fn pdmp(d: usize, method: Method, kind: SurrogateKind) -> RunConfig {
    RunConfig::new(ProblemConfig::new(d), method, Some(SurrogateConfig::new(kind)))
}

fn gp_with(d: usize, method: Method, per_dim: usize) -> RunConfig {
    let mut s = SurrogateConfig::new(SurrogateKind::Gp);
    s.n0 = Some(per_dim * d);
    RunConfig::new(ProblemConfig::new(d), method, Some(s))
}

fn named(mut r: RunConfig, name: String) -> RunConfig {
    r.name = Some(name);
    r
}

fn tag(x: f64) -> String {
    format!("{x:e}").replace('.', "p")
}

fn when_converge() -> Vec<RunConfig> {
    let mut runs = Vec::new();
    for d in DIMS {
        for method in [Method::Zigzag, Method::Bps] {
            let m = method.name();
            runs.push(named(pdmp(d, method, SurrogateKind::Constant), format!("{m}_constant_shrink_d{d}")));
            let mut r = pdmp(d, method, SurrogateKind::Constant);
            r.beta = 0.0;
            runs.push(named(r, format!("{m}_constant_noshrink_d{d}")));
            runs.push(named(pdmp(d, method, SurrogateKind::RandomGradient), format!("{m}_random_gradient_shrink_d{d}")));
        }
    }
    runs
}

fn surrogates() -> Vec<RunConfig> {
    let mut runs = Vec::new();
    for d in DIMS {
        for method in [Method::Zigzag, Method::Bps] {
            for kind in [SurrogateKind::Constant, SurrogateKind::Laplace, SurrogateKind::Gp, SurrogateKind::GradGp, SurrogateKind::AdaptiveGp] {
                runs.push(pdmp(d, method, kind));
            }
        }
        runs.push(RunConfig::new(ProblemConfig::new(d), Method::Rwm, None));
    }
    runs
}

fn pdmp_vs_nuts() -> Vec<RunConfig> {
    let mut runs = Vec::new();
    for d in DIMS {
        runs.push(pdmp(d, Method::Zigzag, SurrogateKind::Gp));
        runs.push(pdmp(d, Method::Bps, SurrogateKind::Gp));
        runs.push(RunConfig::new(ProblemConfig::new(d), Method::Nuts, None));
        runs.push(RunConfig::new(ProblemConfig::new(d), Method::Rwm, None));
    }
    runs
}

fn appendix_a() -> Vec<RunConfig> {
    let mut runs = Vec::new();
    for d in DIMS {
        for beta in [2e-3, 2e-2, 2e-1, 2e0] {
            let cells = [
                ("constant", pdmp(d, Method::Zigzag, SurrogateKind::Constant)),
                ("laplace", pdmp(d, Method::Zigzag, SurrogateKind::Laplace)),
                ("gp25", gp_with(d, Method::Zigzag, 25)),
                ("gp100", gp_with(d, Method::Zigzag, 100)),
            ];
            for (label, mut r) in cells {
                r.beta = beta;
                runs.push(named(r, format!("zigzag_{label}_beta{}_d{d}", tag(beta))));
            }
        }
    }
    runs
}

fn appendix_b() -> Vec<RunConfig> {
    let mut runs = Vec::new();
    for d in DIMS {
        for lambda_ref in [1e-3, 1e-2, 1e-1, 1e0] {
            let mut r = pdmp(d, Method::Bps, SurrogateKind::Gp);
            r.lambda_ref = lambda_ref;
            runs.push(named(r, format!("bps_gp_ref{}_d{d}", tag(lambda_ref))));
        }
    }
    runs
}

pub fn preset(name: &str) -> Result<Sweep> {
    let runs = match name {
        "fig-when-converge" => when_converge(),
        "fig-surrogates" => surrogates(),
        "fig-pdmp-vs-nuts" => pdmp_vs_nuts(),
        "appendix-a" => appendix_a(),
        "appendix-b" => appendix_b(),
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}` (available: {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(Sweep {
        name: name.to_string(),
        runs,
    })
}
