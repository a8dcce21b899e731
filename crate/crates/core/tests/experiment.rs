use std::path::Path;

use pdmp_core::experiment::output::{write_sweep, TRACE_HEADER};
use pdmp_core::experiment::{run_sweep, Method, ProblemConfig, RunConfig, SurrogateConfig, Sweep};
use pdmp_core::surrogate::SurrogateKind;

fn small_sweep() -> Sweep {
    let mut runs = Vec::new();
    for (method, kind) in [
        (Method::Zigzag, Some(SurrogateKind::Laplace)),
        (Method::Bps, Some(SurrogateKind::Gp)),
        (Method::Rwm, None),
        (Method::Nuts, None),
    ] {
        let mut r = RunConfig::new(ProblemConfig::new(2), method, kind.map(SurrogateConfig::new));
        r.budget = Some(400);
        r.checkpoints = Some(vec![100, 200, 400]);
        r.seeds = vec![0, 1];
        r.reference.n = 105_000;
        runs.push(r);
    }
    Sweep {
        name: "plumbing".into(),
        runs,
    }
}

fn run_into(dir: &Path) -> Vec<pdmp_core::experiment::RunRecord> {
    let sweep = small_sweep();
    let records = run_sweep(&sweep, Some(&dir.join("references")), true).unwrap();
    write_sweep(&sweep.name, &records, &dir.join("out")).unwrap();
    records
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn sweep_writes_schemas_and_repeats_bit_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_into(a.path());
    let rb = run_into(b.path());
    assert_eq!(ra, rb);

    for rec in &ra {
        assert_eq!(rec.seeds.len(), 2);
        for s in &rec.seeds {
            assert!(s.diagnostics.evaluations <= 400);
            assert!(s.diagnostics.aborted.is_none(), "{}: {:?}", rec.name, s.diagnostics.aborted);
            assert!(s.trace.iter().all(|p| p.rmse_mean.is_finite() && p.ess_per_eval > 0.0));
            assert!(s.trace.windows(2).all(|w| w[0].n_eval < w[1].n_eval));
        }
        assert!(!rec.aggregate.is_empty());
    }
    // The GP cell pays its training set before the first checkpoint it can report.
    let gp = ra.iter().find(|r| r.name == "bps_gp_d2").unwrap();
    assert!(gp.seeds[0].trace.iter().all(|p| p.n_eval > gp.seeds[0].diagnostics.training_evaluations));

    let fa = files(&a.path().join("out"));
    let fb = files(&b.path().join("out"));
    assert_eq!(fa, fb);
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    for expected in [
        "manifest.json",
        "zigzag_laplace_d2.csv",
        "zigzag_laplace_d2_aggregate.csv",
        "zigzag_laplace_d2_diagnostics.json",
        "zigzag_laplace_d2_seed0_skeleton.csv",
        "rwm_none_d2_seed1_chain.csv",
        "nuts_none_d2.csv",
    ] {
        assert!(names.contains(&expected), "missing {expected} in {names:?}");
    }

    let trace = std::fs::read_to_string(a.path().join("out/zigzag_laplace_d2.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next().unwrap(), TRACE_HEADER.join(","));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..4], &["zigzag", "laplace", "2", "0"]);
    assert_eq!(row[7], "", "wasserstein column stays empty when disabled");

    let sk = std::fs::read_to_string(a.path().join("out/zigzag_laplace_d2_seed0_skeleton.csv")).unwrap();
    assert_eq!(sk.lines().next().unwrap(), "k,t,kind,xi_1,xi_2,v_1,v_2");
    let ch = std::fs::read_to_string(a.path().join("out/rwm_none_d2_seed1_chain.csv")).unwrap();
    assert_eq!(ch.lines().next().unwrap(), "iteration,xi_1,xi_2,accepted,n_evals_cumulative");

    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(a.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["sweep"], "plumbing");
}

#[test]
fn toml_sweep_parses_with_defaults() {
    let text = r#"
name = "user"
[[runs]]
method = "zigzag"
seeds = [3]
[runs.problem]
d = 2
[runs.surrogate]
kind = "grad_gp"
"#;
    let sweep = Sweep::from_toml(text).unwrap();
    let r = &sweep.runs[0];
    assert_eq!(r.name(), "zigzag_grad_gp_d2");
    assert_eq!(r.budget(), 2000);
    assert_eq!(r.beta, 2e-2);
    assert_eq!(r.surrogate.as_ref().unwrap().n0(2), 50);
    assert!(Sweep::from_toml(&text.replace("seeds", "seedz")).is_err());
    assert!(Sweep::from_toml(&text.replace("zigzag", "hmc")).is_err());
}
