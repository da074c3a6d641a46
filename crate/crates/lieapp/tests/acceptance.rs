//! Twelve end-to-end acceptance criteria. Each prints one PASS/FAIL line;
//! the test fails if any criterion does.

use std::f64::consts::FRAC_PI_2;
use std::time::Instant;

use lieapp::catalog::{catalog, sample, Params, SurfaceChart};
use lieapp::conserved::{
    classify_lw, flat_front_detect, lw_conserved_pair, norm_polynomial, pencil_metrics, tubular_combination,
    verify_cq, LwClass, PencilMetrics, Type1Class,
};
use lieapp::gauge::{closedness, closedness_oracle_scale, combescure_associates, middle_potential_lw, quadratic_differential, separability_check, GaugeOneForm};
use lieapp::legendre::{lift_euclidean, LegendreGrid};
use lieapp::minkowski::{null_directions_in, orthogonal_complement};
use lieapp::transforms::{
    calapso_transform, darboux_cq_transport, darboux_from_gauge, darboux_gauge, holonomy_residual,
    integrate_gauge, integrate_gauge_with, lw_preserving_darboux, lw_seed, DarbouxOptions, GaugeOptions, Sweep,
};

const GRIDS: [usize; 3] = [32, 64, 128];

fn params(s: &[(&str, f64)]) -> Params {
    s.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn chart(name: &str) -> SurfaceChart {
    let p = match name {
        "torus" => params(&[("R", 2.0), ("r", 1.0)]),
        "cylinder" => params(&[("r", 1.0)]),
        _ => Params::new(),
    };
    catalog(name, &p).unwrap()
}

struct Fixture {
    l: LegendreGrid,
    abc: [f64; 3],
    eta: GaugeOneForm,
}

fn fixture_from(c: &SurfaceChart, n: usize) -> Fixture {
    let l = lift_euclidean(&sample(c, n, n).unwrap()).unwrap();
    let abc = c.lw_triple().unwrap();
    let eta = middle_potential_lw(&l, abc[0], abc[1], abc[2]).unwrap();
    Fixture { l, abc, eta }
}

fn fixture(name: &str, n: usize) -> Fixture {
    fixture_from(&chart(name), n)
}

fn orders(h: &[f64], e: &[f64]) -> Vec<f64> {
    (1..e.len()).map(|i| (e[i - 1] / e[i]).ln() / (h[i - 1] / h[i]).ln()).collect()
}

fn sci(v: &[f64]) -> String {
    let s: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", s.join(", "))
}

fn spacing(f: &Fixture) -> f64 {
    f.l.grid.hu.max(f.l.grid.hv)
}

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn closedness_convergence() -> Outcome {
    let r: Vec<f64> = GRIDS
        .iter()
        .map(|&n| {
            let f = fixture("catenoid", n);
            closedness(&f.eta, &f.l.grid).max_normalized
        })
        .collect();
    let ratios: Vec<f64> = r.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = ratios.iter().all(|q| (3.0..=5.0).contains(q));
    outcome(pass, format!("residuals {}, ratios {ratios:.3?} (want 4 ± 25%)", sci(&r)))
}

fn closedness_linearity() -> Outcome {
    let base = fixture("catenoid", 128);
    let oracle = closedness_oracle_scale(&base.l);
    let slopes: Vec<f64> = [1e-3, 1e-2]
        .iter()
        .map(|&d| {
            let eta = middle_potential_lw(&base.l, 0.0, 1.0, d).unwrap();
            closedness(&eta, &base.l.grid).max_normalized / (d * oracle)
        })
        .collect();
    let pass = slopes.iter().all(|s| (s - 1.0).abs() <= 0.1) && (slopes[0] / slopes[1] - 1.0).abs() <= 0.1;
    outcome(pass, format!("residual/(δ·oracle) = {slopes:.5?} for δ = 1e-3, 1e-2"))
}

fn conserved_quantities() -> Outcome {
    let t = fixture("torus", 64);
    let (p, q) = lw_conserved_pair(&t.l, t.abc[0], t.abc[1], t.abc[2]);
    let k = tubular_combination(&p, &q, t.abc[0], t.abc[1], t.abc[2]);
    let tube = verify_cq(&t.l, &t.eta, &k).max_all();
    let mut pass = tube <= 1e-9;
    let mut detail = format!("torus constant CQ {tube:.2e}");
    for name in ["catenoid", "pseudosphere"] {
        let (mut h, mut ep, mut eq) = (vec![], vec![], vec![]);
        for &n in &GRIDS {
            let f = fixture(name, n);
            let (p, q) = lw_conserved_pair(&f.l, f.abc[0], f.abc[1], f.abc[2]);
            h.push(spacing(&f));
            ep.push(verify_cq(&f.l, &f.eta, &p).worst());
            eq.push(verify_cq(&f.l, &f.eta, &q).worst());
        }
        let (op, oq) = (orders(&h, &ep), orders(&h, &eq));
        pass &= op.iter().chain(&oq).all(|o| *o >= 1.8);
        detail += &format!("; {name} p {} orders {op:.2?}, q orders {oq:.2?}", sci(&ep));
    }
    outcome(pass, detail)
}

fn norm_constancy() -> Outcome {
    let mut worst = 0.0f64;
    for name in ["catenoid", "pseudosphere", "torus", "cylinder", "unduloid"] {
        let f = fixture(name, 64);
        let (p, q) = lw_conserved_pair(&f.l, f.abc[0], f.abc[1], f.abc[2]);
        worst = worst.max(norm_polynomial(&p).max_deviation()).max(norm_polynomial(&q).max_deviation());
    }
    outcome(worst <= 1e-8, format!("max coefficient deviation {worst:.2e} over five fixtures"))
}

fn classification() -> Outcome {
    let class = |name: &str| {
        let f = fixture(name, 32);
        classify_lw(&f.l, f.abc[0], f.abc[1], f.abc[2])
    };
    let cat = class("catenoid");
    let pse = class("pseudosphere");
    let tor = class("torus");
    let cyl = class("cylinder");
    let pass = matches!(cat, LwClass::NonTubular { p: Type1Class::Isothermic, q: Type1Class::LIsothermic })
        && matches!(pse, LwClass::NonTubular { p: Type1Class::Guichard, .. })
        && matches!(tor, LwClass::Tubular { .. })
        && matches!(cyl, LwClass::Tubular { .. });
    let name = |c: &LwClass| match c {
        LwClass::Tubular { .. } => "tubular".to_string(),
        LwClass::NonTubular { p, q } => format!("{}/{}", p.as_str(), q.as_str()),
    };
    outcome(
        pass,
        format!("catenoid {}, pseudosphere {}, torus {}, cylinder {}", name(&cat), name(&pse), name(&tor), name(&cyl)),
    )
}

fn flatness() -> Outcome {
    let mut pass = true;
    let mut detail = String::new();
    let fixtures: Vec<Fixture> = GRIDS.iter().map(|&n| fixture("catenoid", n)).collect();
    let h: Vec<f64> = fixtures.iter().map(spacing).collect();
    for t in [0.25, 0.5] {
        let mean: Vec<f64> = fixtures
            .iter()
            .map(|f| {
                let r = holonomy_residual(&f.eta, t);
                r.iter().sum::<f64>() / r.len() as f64
            })
            .collect();
        let o = orders(&h, &mean);
        pass &= o.iter().all(|x| *x >= 2.0);
        let diff: Vec<f64> = fixtures
            .iter()
            .map(|f| {
                let a = integrate_gauge(&f.eta, t).unwrap();
                let col = GaugeOptions { sweep: Sweep::ColumnFirst, ..Default::default() };
                a.max_difference(&integrate_gauge_with(&f.eta, t, &col).unwrap())
            })
            .collect();
        // O(h²) bound calibrated on the coarsest grid
        let c = diff[0] / (h[0] * h[0]);
        pass &= diff.iter().zip(&h).skip(1).all(|(d, h)| *d <= c * h * h);
        detail += &format!("t={t}: holonomy {} orders {o:.2?}, sweep gap {}; ", sci(&mean), sci(&diff));
    }
    outcome(pass, detail.trim_end_matches("; ").to_string())
}

fn calapso_invariance() -> Outcome {
    let mut pass = true;
    let mut detail = String::new();
    for t in [0.1, 0.5] {
        let (mut h, mut e) = (vec![], vec![]);
        for &n in &GRIDS {
            let f = fixture("catenoid", n);
            let (p, q) = lw_conserved_pair(&f.l, 0.0, 1.0, 0.0);
            let r = calapso_transform(&f.l, &f.eta, t, &[p, q]).unwrap();
            if n == 64 {
                pass &= r.q_deviation <= 1e-4;
                detail += &format!("t={t}: q deviation {:.2e} at 64²", r.q_deviation);
            }
            h.push(spacing(&f));
            e.push(r.cqs.iter().map(|c| c.report.worst()).fold(0.0, f64::max));
        }
        let o = orders(&h, &e);
        pass &= o.iter().all(|x| *x >= 1.8);
        detail += &format!(", transported CQ residuals {} orders {o:.2?}; ", sci(&e));
    }
    outcome(pass, detail.trim_end_matches("; ").to_string())
}

fn catenoid_patch(n: usize) -> Fixture {
    fixture_from(&chart("catenoid").with_domain([-0.5, 0.5], [0.0, FRAC_PI_2]), n)
}

fn darboux_lw() -> Outcome {
    let f = catenoid_patch(128);
    let (p, q) = lw_conserved_pair(&f.l, 0.0, 1.0, 0.0);
    let mut pass = true;
    let mut detail = String::new();
    for angles in [[1.0, 1.0], [2.0, 4.0], [1.2, 3.0]] {
        match lw_preserving_darboux(&f.l, &f.eta, (&p, &q), f.abc, 0.4, angles) {
            Ok(r) => {
                pass &= r.lw_residual <= 1e-3 && r.w_residual <= 1e-3;
                detail += &format!("{angles:?}: |2Ĥ| {:.2e}, W {:.2e}; ", r.lw_residual, r.w_residual);
            }
            Err(e) => {
                pass = false;
                detail += &format!("{angles:?}: {e}; ");
            }
        }
    }
    outcome(pass, detail.trim_end_matches("; ").to_string())
}

fn degree_bookkeeping() -> Outcome {
    let f = catenoid_patch(65);
    let (p, q) = lw_conserved_pair(&f.l, 0.0, 1.0, 0.0);
    let m = 0.4;
    let g = darboux_gauge(&f.eta, m).unwrap();
    let base = f.l.idx(g.base.0, g.base.1);

    let seed = null_directions_in(&orthogonal_complement(&[q.eval(base, m)]), [2.0, 4.0]).unwrap();
    let free = darboux_from_gauge(&f.l, &g, &seed, &DarbouxOptions::default()).unwrap();
    let tf = darboux_cq_transport(&free, &f.l, &p);

    let seed = lw_seed(&p, &q, m, base, [2.0, 4.0]).unwrap();
    let opts = DarbouxOptions { constraints: vec![p.eval_field(m)], regularity_tol: None };
    let con = darboux_from_gauge(&f.l, &g, &seed, &opts).unwrap();
    let tc = darboux_cq_transport(&con, &f.l, &p);
    let (a, b) = (norm_polynomial(&p), norm_polynomial(&tc.cq));
    let gap = if a.coeffs.len() == b.coeffs.len() {
        a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let pass = !tf.constrained && tf.cq.degree() == 2 && tc.constrained && tc.cq.degree() == 1 && gap <= 1e-8;
    outcome(
        pass,
        format!("unconstrained degree {}, constrained degree {}, norm coefficient gap {gap:.2e}", tf.cq.degree(), tc.cq.degree()),
    )
}

fn associates() -> Outcome {
    let mut pass = true;
    let mut detail = String::new();
    for name in ["catenoid", "pseudosphere", "unduloid"] {
        let c = chart(name);
        let [a, b, cc] = c.lw_triple().unwrap();
        let grid = sample(&c, 64, 64).unwrap();
        let asc = combescure_associates(&grid, a, b, cc).unwrap();
        let r = asc.max_residual();
        pass &= r <= 1e-10;
        detail += &format!("{name} {r:.2e}; ");
        if name == "catenoid" {
            let hat = asc.hat_sum.iter().map(|x| x.abs()).fold(0.0, f64::max);
            pass &= hat <= 1e-10;
            detail += &format!("minimal 1/κ̂₁ + 1/κ̂₂ {hat:.2e}; ");
        }
    }
    outcome(pass, detail.trim_end_matches("; ").to_string())
}

fn separability() -> Outcome {
    let mut pass = true;
    let mut detail = String::new();
    for name in ["catenoid", "torus"] {
        let f = fixture(name, 64);
        let s = separability_check(&quadratic_differential(&f.l, &f.eta).unwrap()).worst();
        pass &= s <= 1e-6;
        detail += &format!("{name} {s:.2e}; ");
    }
    outcome(pass, detail.trim_end_matches("; ").to_string())
}

fn flat_fronts() -> Outcome {
    let g_inf = [[1.0, 0.0], [0.0, -2.0]];
    let synthetic = PencilMetrics {
        g0: [[-0.5, 0.0], [0.0, 1.0]],
        g_inf,
        det_inf: g_inf[0][0] * g_inf[1][1] - g_inf[0][1] * g_inf[1][0],
    };
    let t0 = flat_front_detect(&synthetic);
    let mut pass = matches!(t0, Some(t) if (t - 0.5).abs() <= 1e-8);
    let mut detail = format!("synthetic t₀ = {t0:?}");
    for name in ["catenoid", "torus"] {
        let f = fixture(name, 32);
        let (p, q) = lw_conserved_pair(&f.l, f.abc[0], f.abc[1], f.abc[2]);
        let pm = pencil_metrics(&p, &q).unwrap();
        let r = flat_front_detect(&pm);
        pass &= r.is_none();
        detail += &format!(", {name} {r:?}");
    }
    outcome(pass, detail)
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 12] = [
        ("closedness convergence", closedness_convergence),
        ("closedness oracle linearity", closedness_linearity),
        ("conserved-quantity residuals", conserved_quantities),
        ("norm-polynomial constancy", norm_constancy),
        ("classification matrix", classification),
        ("flatness and holonomy", flatness),
        ("Calapso invariance", calapso_invariance),
        ("Darboux LW preservation", darboux_lw),
        ("degree bookkeeping", degree_bookkeeping),
        ("associate identity", associates),
        ("separability", separability),
        ("flat-front detection", flat_fronts),
    ];
    println!();
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} {:>2} {name} ({:.1}s): {}", i + 1, start.elapsed().as_secs_f64(), o.detail);
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
