//! Acceptance suite. One PASS/FAIL line per criterion; exits nonzero if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use cgeom::cost::Engine;
use cgeom::harness::{
    barrier_schedule, build_sets, contradiction_probe, dyadic, f_of_d, inverse_square_instance, scaling_check,
    ConstructionConfig, EuclideanInstance, Mode, WGrid, DEFAULT_WINDOW, MAX_HALVINGS,
};
use cgeom::loeper::{find_control_cost, loeper_suite, witness_mtw, Roles};
use cgeom::mtw::{a_matrix, classify, contract, mtw_form, mtw_tensor_jet, Classification, ClassifyOptions, Nncc};
use cgeom::potential::{
    containment_test, contact_set, degeneracy_scan, exterior_sphere_point, solve_semidiscrete, DiscretePotential,
    Grid, SemidiscreteOptions, SourceMeasure, TargetMeasure,
};
use cgeom::{CostHandle, Domain, DomainPair, Point, Vector};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn v(c: &[f64]) -> Vector {
    Vector::from_column_slice(c)
}

fn in_ball<R: Rng>(center: &Vector, r: f64, rng: &mut R) -> Vector {
    Domain::ball(center.as_slice(), r).sample(rng)
}

fn rel(got: f64, want: f64, scale: f64) -> f64 {
    (got - want).abs() / scale.abs().max(1e-300)
}

fn unit<R: Rng>(n: usize, rng: &mut R) -> Vector {
    cgeom::cost::domain::random_unit(n, rng)
}

// ---------------------------------------------------------------------------------------------
// 1. closed forms for c = |x - x̄|^{-2}

fn ac1() -> Outcome {
    const FD_TOL: f64 = 1e-5;
    const AN_TOL: f64 = 1e-9;
    let builtin = CostHandle::inverse_square();
    let expr_any = CostHandle::user_expression("1 / dot(x - xbar, x - xbar)").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    // worst relative errors: [grad, det, A, form] × [analytic, fd]
    let mut worst = [[0.0f64; 2]; 4];
    let mut nested = 0.0f64;
    let mut bump = |i: usize, j: usize, e: f64| worst[i][j] = worst[i][j].max(e);
    for _ in 0..100 {
        let n = rng.gen_range(2..=4);
        let x = in_ball(&Vector::zeros(n), 0.5, &mut rng);
        let mut far = Vector::zeros(n);
        far[0] = 1.5;
        let xb = in_ball(&far, 0.5, &mut rng);
        // the domains seed the c-exp Newton start for the expression cost
        let pair = DomainPair::new(Domain::ball(&vec![0.0; n], 0.5), Domain::ball(far.as_slice(), 0.5)).unwrap();
        let expr = expr_any.clone().with_domains(pair);
        let expr_fd = expr.clone().with_engine(Engine::FiniteDifference);
        let r = &x - &xb;
        let s = r.norm();
        let p_want = &r * (2.0 * s.powi(-4));
        let det_want = -3.0 * 2f64.powi(n as i32) * s.powi(-4 * n as i32);

        let analytic = [builtin.jet(&x, &xb, 2).unwrap(), expr.engine_jet(&x, &xb, 2, Engine::Dual)];
        let fd = expr.engine_jet(&x, &xb, 2, Engine::FiniteDifference);
        for (j, jets) in [(0, &analytic[..]), (1, std::slice::from_ref(&fd))] {
            for jet in jets {
                let g = -&jet.grad_x;
                bump(0, j, (&g - &p_want).amax() / p_want.amax());
                bump(1, j, rel(jet.mixed().determinant(), det_want, det_want));
            }
        }

        let p = p_want.clone();
        let pn = p.norm();
        let a_want = (DMatrix::identity(n, n) - &p * p.transpose() * (4.0 / (pn * pn))) * (2f64.powf(-1.0 / 3.0) * pn.powf(4.0 / 3.0));
        for (j, c) in [(0, &builtin), (0, &expr), (1, &expr_fd)] {
            let a = a_matrix(c, &x, &p).unwrap();
            bump(2, j, (&a.entries - &a_want).amax() / a_want.amax());
        }

        // η in span(p, V) orthogonal to V, so ⟨p̂, η⟩² = 1 - θ²
        let vv = unit(n, &mut rng);
        let q = p.normalize();
        let th = q.dot(&vv);
        let eta = (&q - &vv * th).normalize();
        let k = 2f64.powf(5.0 / 3.0) / 9.0 * pn.powf(-2.0 / 3.0);
        let want = k * (1.0 - 8.0 * th * th + 16.0 * th.powi(4));
        for c in [&builtin, &expr] {
            let t = mtw_tensor_jet(c, &x, &xb).unwrap();
            bump(3, 0, rel(contract(&t, &vv, &eta), want, k));
        }
        bump(3, 1, rel(mtw_form(&builtin, &x, &xb, &vv, &eta).unwrap(), want, k));
        bump(3, 1, rel(mtw_form(&expr, &x, &xb, &vv, &eta).unwrap(), want, k));
        // second differences of an already differenced A: informational only
        nested = nested.max(rel(mtw_form(&expr_fd, &x, &xb, &vv, &eta).unwrap(), want, k));
    }
    let names = ["-Dc", "det DD̄c", "A", "orthogonal form"];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, name) in names.iter().enumerate() {
        pass &= worst[i][0] <= AN_TOL && worst[i][1] <= FD_TOL;
        parts.push(format!("{name}: analytic {:.1e} fd {:.1e}", worst[i][0], worst[i][1]));
    }
    outcome(
        pass,
        format!("100 points; {} (tol {AN_TOL:e}/{FD_TOL:e}); form from FD-engine A {nested:.1e}", parts.join(", ")),
    )
}

// ---------------------------------------------------------------------------------------------
// 2. classification verdicts

fn separated(n: usize) -> DomainPair {
    let mut t = vec![0.0; n];
    t[0] = 2.0;
    DomainPair::new(Domain::ball(&vec![0.0; n], 0.3), Domain::ball(&t, 0.3)).unwrap()
}

fn ac2() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in 2..=4 {
        let pair = separated(n);
        let opts = ClassifyOptions { restarts: 64, seed: 7 + n as u64, ..Default::default() };
        let c = CostHandle::inverse_square().with_domains(pair.clone());
        match classify(&c, &pair, &opts) {
            Ok(r) => {
                let mut extra = String::new();
                let ok_class = r.classification == Classification::A3wOnly;
                let (ok_nncc, err) = match &r.nncc {
                    Nncc::Fails { witness } => {
                        // the descent minimum sits at V = η ⊥ p; the quoted value belongs to V = λη, η ∥ p
                        let (x, xbar) = (v(&witness.x), v(&witness.xbar));
                        let l2 = v(&witness.v).norm_squared() * v(&witness.eta).norm_squared();
                        let k = (2f64.powf(5.0 / 3.0) / 3.0) * witness.p_norm.powf(-2.0 / 3.0);
                        let eta = -c.grad_x(&x, &xbar).unwrap().normalize();
                        let lambda = 0.75;
                        let at = mtw_tensor_jet(&c, &x, &xbar).map(|t| contract(&t, &(&eta * lambda), &eta));
                        let e = at.map(|f| rel(f, -k * lambda * lambda, k * lambda * lambda)).unwrap_or(f64::NAN);
                        let deeper = witness.value <= -k * l2 * (1.0 - 1e-5);
                        extra = format!(", reported min / quoted {:.3}", witness.value / (-k * l2));
                        (e <= 1e-5 && deeper, e)
                    }
                    Nncc::Holds => (false, f64::NAN),
                };
                pass &= ok_class && ok_nncc;
                parts.push(format!("inverse_square n={n}: {:?}, parallel witness rel err {err:.1e}{extra}", r.classification));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("inverse_square n={n}: error {e}"));
            }
        }
        let c = CostHandle::neg_inner_product().with_domains(pair.clone());
        match classify(&c, &pair, &opts) {
            Ok(r) => {
                let zero = r.min_orthogonal_value.abs() < 1e-8 && r.min_unconstrained_value.abs() < 1e-8;
                let not_a3s = !matches!(r.classification, Classification::A3s { .. });
                let holds = matches!(r.nncc, Nncc::Holds);
                pass &= zero && not_a3s && holds;
                parts.push(format!(
                    "neg_inner_product n={n}: {:?}, |form| ≤ {:.1e}, NNCC {}",
                    r.classification,
                    r.min_orthogonal_value.abs().max(r.min_unconstrained_value.abs()),
                    if holds { "holds" } else { "fails" }
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("neg_inner_product n={n}: error {e}"));
            }
        }
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------------------------------------
// 3. Loeper maximum principle

fn loeper_pair() -> DomainPair {
    DomainPair::new(Domain::ball(&[0.0, 0.0], 0.5), Domain::ball(&[2.5, 0.5], 0.7)).unwrap()
}

fn ac3() -> Outcome {
    const TRIALS: usize = 10_000;
    const T_SAMPLES: usize = 64;
    let pair = loeper_pair();
    let mut pass = true;
    let mut parts = Vec::new();
    for c in [CostHandle::inverse_square(), CostHandle::neg_inner_product()] {
        let c = c.with_domains(pair.clone());
        for roles in [Roles::Source, Roles::Target] {
            match loeper_suite(&c, &pair, TRIALS, T_SAMPLES, roles, 31) {
                Ok(s) => {
                    pass &= s.violations == 0;
                    parts.push(format!("{} {:?}: {}/{} violations, worst margin {:.1e}", s.cost, roles, s.violations, s.trials, s.worst_margin));
                }
                Err(e) => {
                    pass = false;
                    parts.push(format!("{} {:?}: error {e}", c.name(), roles));
                }
            }
        }
    }
    match find_control_cost(&pair, 5, 40) {
        Ok(ctrl) => {
            let c = CostHandle::user_expression(&ctrl.expression).unwrap().with_domains(pair.clone());
            match loeper_suite(&c, &pair, 2000, T_SAMPLES, Roles::Source, 32) {
                Ok(s) => {
                    let negative = s.witnesses.iter().filter_map(|w| witness_mtw(&c, w).ok()).filter(|(m, _)| *m < 0.0).count();
                    pass &= s.violations >= 1 && negative >= 1;
                    parts.push(format!(
                        "control '{}': {} violations, {} of {} witnesses with negative MTW",
                        ctrl.expression,
                        s.violations,
                        negative,
                        s.witnesses.len()
                    ));
                }
                Err(e) => {
                    pass = false;
                    parts.push(format!("control '{}': error {e}", ctrl.expression));
                }
            }
        }
        Err(e) => {
            pass = false;
            parts.push(format!("control cost search: {e}"));
        }
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------------------------------------
// 4. semi-discrete solver against the LP plan

fn lp_plan(c: &CostHandle, mu: &SourceMeasure, nu: &TargetMeasure) -> Vec<Vec<f64>> {
    let (pts, m) = (mu.points(), nu.m());
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Vec<minilp::Variable>> = pts
        .iter()
        .map(|x| nu.sites.iter().map(|s| lp.add_var(c.value(x, s).unwrap(), (0.0, f64::INFINITY))).collect())
        .collect();
    for (i, row) in vars.iter().enumerate() {
        let terms: Vec<(minilp::Variable, f64)> = row.iter().map(|&v| (v, 1.0)).collect();
        lp.add_constraint(terms.as_slice(), ComparisonOp::Eq, mu.masses()[i]);
    }
    // the last column constraint is implied by the others
    for j in 0..m - 1 {
        let terms: Vec<(minilp::Variable, f64)> = vars.iter().map(|r| (r[j], 1.0)).collect();
        lp.add_constraint(terms.as_slice(), ComparisonOp::Eq, nu.weights[j]);
    }
    let sol = lp.solve().expect("LP oracle");
    vars.iter().map(|r| r.iter().map(|&v| *sol.var_value(v)).collect()).collect()
}

fn ac4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let square = Domain::cube(&[-0.5, -0.5], &[0.5, 0.5]);
    let mu = SourceMeasure::uniform(square, &[41, 41]).unwrap();
    let mut within = 0;
    let mut worst_tv = 0.0f64;
    let mut worst_mass = 0.0f64;
    let mut errors = Vec::new();
    for inst in 0..20 {
        let (c, center) = match inst % 3 {
            0 => (CostHandle::half_squared_distance(), v(&[0.0, 0.0])),
            1 => (CostHandle::neg_inner_product(), v(&[0.0, 0.0])),
            _ => (CostHandle::inverse_square(), v(&[2.0, 0.0])),
        };
        let sites: Vec<Point> = (0..3).map(|_| in_ball(&center, 0.5, &mut rng)).collect();
        let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..1.5)).collect();
        let nu = TargetMeasure::normalized(sites, raw, Domain::ball(center.as_slice(), 0.5)).unwrap();
        let sol = match solve_semidiscrete(&c, &mu, &nu, &SemidiscreteOptions::default()) {
            Ok(s) => s,
            Err(e) => {
                errors.push(format!("#{inst}: {e}"));
                continue;
            }
        };
        let plan = lp_plan(&c, &mu, &nu);
        let tv: f64 = 0.5
            * plan
                .iter()
                .zip(&sol.assignment)
                .zip(mu.masses())
                .map(|((row, &a), &w)| (0..3).map(|j| (row[j] - if j == a { w } else { 0.0 }).abs()).sum::<f64>())
                .sum::<f64>();
        worst_tv = worst_tv.max(tv);
        worst_mass = worst_mass.max(sol.mass_error);
        if tv <= 0.01 && sol.mass_error <= 1e-12 {
            within += 1;
        }
    }
    let mut detail = format!("{within}/20 within 1% TV (worst {worst_tv:.2e}); worst mass drift {worst_mass:.1e} (tol 1e-12)");
    if !errors.is_empty() {
        detail += &format!("; errors: {}", errors.join(", "));
    }
    outcome(within == 20, detail)
}

// ---------------------------------------------------------------------------------------------
// 5. degeneracy probe

fn annulus_instance() -> (DiscretePotential, TargetMeasure) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ann = Domain::Annulus { center: vec![0.0, 0.0], inner: 1.0, outer: 2.0 };
    let mut sites: Vec<Point> = (0..32)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / 32.0;
            v(&[a.cos(), a.sin()])
        })
        .collect();
    sites.extend((0..32).map(|_| ann.sample(&mut rng)));
    // discrete u(x) = |x| + |x|²/2
    let lambdas = sites.iter().map(|s| -0.5 * (s.norm() - 1.0).powi(2)).collect();
    let nu = TargetMeasure::normalized(sites.clone(), vec![1.0; 64], ann).unwrap();
    (DiscretePotential::new(CostHandle::neg_inner_product(), sites, lambdas).unwrap(), nu)
}

/// Jittered lattice sites over a box or ball support with weights within ±10% of uniform.
fn near_uniform<R: Rng>(n: usize, per_axis: usize, ball: bool, rng: &mut R) -> TargetMeasure {
    let support = if ball { Domain::ball(&vec![0.0; n], 1.0) } else { Domain::cube(&vec![-1.0; n], &vec![1.0; n]) };
    let h = 2.0 / per_axis as f64;
    let mut sites = Vec::new();
    for idx in 0..per_axis.pow(n as u32) {
        let mut rest = idx;
        let p = Vector::from_fn(n, |_, _| {
            let i = rest % per_axis;
            rest /= per_axis;
            -1.0 + (i as f64 + 0.5) * h + rng.gen_range(-0.1..0.1) * h
        });
        if support.contains(&p) {
            sites.push(p);
        }
    }
    let w: Vec<f64> = sites.iter().map(|_| rng.gen_range(0.9..1.1)).collect();
    TargetMeasure::normalized(sites, w, support).unwrap()
}

struct ScanSummary {
    singular: usize,
    max_affdim: usize,
    failures: usize,
}

fn scan_instance(c: &CostHandle, nu: &TargetMeasure, src_res: usize, scan_res: usize) -> cgeom::Result<ScanSummary> {
    let n = nu.support.dim();
    let src = Domain::cube(&vec![-0.5; n], &vec![0.5; n]);
    let mu = SourceMeasure::uniform(src, &vec![src_res; n])?;
    let sol = solve_semidiscrete(c, &mu, nu, &SemidiscreteOptions { tol: 5e-3, ..Default::default() })?;
    let grid = Grid::cube(&vec![-0.5; n], &vec![0.5; n], scan_res)?;
    let spacing = nu.spacing();
    // grid points within half a cell of a cell interface
    let tol = 0.5 * grid.cell_diameter() * 2.0 * spacing;
    // neighbouring Laguerre cells can sit a couple of site pitches apart where the map stretches
    let rows = degeneracy_scan(&sol.potential, &grid, nu, tol, 2.0 * spacing)?;
    Ok(ScanSummary {
        singular: rows.len(),
        max_affdim: rows.iter().map(|r| r.affdim).max().unwrap_or(0),
        failures: rows.iter().filter(|r| !r.bound_ok).count(),
    })
}

fn ac5() -> Outcome {
    let mut parts = Vec::new();
    let (u, nu) = annulus_instance();
    let grid = Grid::cube(&[-1.0, -1.0], &[1.0, 1.0], 21).unwrap();
    let rows = degeneracy_scan(&u, &grid, &nu, 1e-12, nu.spacing()).unwrap();
    let origin = rows.iter().find(|r| r.x.iter().all(|x| x.abs() < 1e-12));
    let annulus_ok = origin.is_some_and(|o| o.affdim == 2 && !o.meets_interior && o.bound_ok);
    parts.push(match origin {
        Some(o) => format!("annulus x=0: affdim {} meets_interior {} bound_ok {}", o.affdim, o.meets_interior, o.bound_ok),
        None => "annulus x=0: not singular".into(),
    });

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let c = CostHandle::half_squared_distance();
    let mut uniform_ok = true;
    let mut singular = 0;
    let mut per = Vec::new();
    for i in 0..10 {
        let nu = near_uniform(2, 7, i % 2 == 1, &mut rng);
        match scan_instance(&c, &nu, 41, 41) {
            Ok(s) => {
                uniform_ok &= s.max_affdim == 0 && s.failures == 0;
                singular += s.singular;
                per.push(s.max_affdim.to_string());
            }
            Err(e) => {
                uniform_ok = false;
                parts.push(format!("near-uniform #{i}: {e}"));
            }
        }
    }
    uniform_ok &= singular > 0;
    parts.push(format!("10 near-uniform n=2 instances: {singular} singular points, all affdim 0: {uniform_ok} (max affdim per instance {})", per.join(",")));

    // sensitivity control: a lattice with a wide central gap forces a jump across it
    let gap_ok = {
        let support = Domain::cube(&[-1.0, -1.0], &[1.0, 1.0]);
        let sites: Vec<Point> = (0..64)
            .map(|i| v(&[-0.875 + 0.25 * (i % 8) as f64, -0.875 + 0.25 * (i / 8) as f64]))
            .filter(|p| p[0].abs() > 0.5)
            .collect();
        let w = vec![1.0; sites.len()];
        let nu = TargetMeasure::normalized(sites, w, support).unwrap();
        match scan_instance(&c, &nu, 80, 41) {
            Ok(s) => {
                parts.push(format!("split-support control: max affdim {}", s.max_affdim));
                s.max_affdim == 1
            }
            Err(e) => {
                parts.push(format!("split-support control: {e}"));
                false
            }
        }
    };

    let mut failures = 0;
    let mut errors = 0;
    let mut singular = 0;
    for i in 0..200 {
        let n = if i % 4 == 3 { 3 } else { 2 };
        let per_axis = if n == 2 { rng.gen_range(4..=8) } else { 4 };
        let c = if i % 2 == 0 { CostHandle::half_squared_distance() } else { CostHandle::neg_inner_product() };
        let nu = near_uniform(n, per_axis, rng.gen_bool(0.5), &mut rng);
        match scan_instance(&c, &nu, if n == 2 { 31 } else { 13 }, if n == 2 { 31 } else { 13 }) {
            Ok(s) => {
                failures += s.failures;
                singular += s.singular;
            }
            Err(_) => errors += 1,
        }
    }
    parts.push(format!("200-instance suite: {failures} bound_ok failures over {singular} singular points, {errors} solver errors"));
    outcome(annulus_ok && uniform_ok && gap_ok && failures == 0 && errors == 0, parts.join("; "))
}

// ---------------------------------------------------------------------------------------------
// 6. containment at the exterior sphere point

/// Active sites x̄₀ ± aᵢ e_{σ(i)} for i < r, fences x̄₀ ± εⱼ e_{σ(j)} lowered by δⱼ on the remaining axes,
/// and far sites well below. The contact set through the center is an axis-aligned box face.
fn containment_instance<R: Rng>(rng: &mut R) -> (DiscretePotential, Point, Point, Grid) {
    let n = rng.gen_range(2..=3);
    let r = rng.gen_range(1..n);
    let c = if rng.gen_bool(0.5) { CostHandle::neg_inner_product() } else { CostHandle::half_squared_distance() };
    let h = 0.125;
    let half = 8;
    let x0 = Vector::from_fn(n, |_, _| rng.gen_range(-4..=4) as f64 * h);
    let xbar0 = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let mut axes: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        axes.swap(i, rng.gen_range(0..=i));
    }
    let mut sites = Vec::new();
    let mut lift = Vec::new();
    for &ax in &axes[..r] {
        let a = rng.gen_range(0.3..1.0);
        for sgn in [1.0, -1.0] {
            let mut s = xbar0.clone();
            s[ax] += sgn * a;
            sites.push(s);
            lift.push(0.0);
        }
    }
    if rng.gen_bool(0.5) {
        sites.push(xbar0.clone());
        lift.push(0.0);
    }
    for &ax in &axes[r..] {
        let eps = rng.gen_range(0.3..1.0);
        // faces at |x - x0|_ax = δ/ε, a whole number of grid steps
        let steps = rng.gen_range(1..=half - 1) as f64;
        let delta = eps * steps * h;
        for sgn in [1.0, -1.0] {
            let mut s = xbar0.clone();
            s[ax] += sgn * eps;
            sites.push(s);
            lift.push(-delta);
        }
    }
    for _ in 0..rng.gen_range(0..4) {
        sites.push(Vector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0)));
        lift.push(-rng.gen_range(5.0..10.0));
    }
    // λⱼ = c(x₀, x̄ⱼ) + lift makes branch j equal lift at x₀
    let lambdas = sites.iter().zip(&lift).map(|(s, l)| c.value(&x0, s).unwrap() + l).collect();
    let u = DiscretePotential::new(c, sites, lambdas).unwrap();
    // cell centers x₀ + (i - half)·h
    let w = (half as f64 + 0.5) * h;
    let lo: Vec<f64> = x0.iter().map(|x| x - w).collect();
    let hi: Vec<f64> = x0.iter().map(|x| x + w).collect();
    let grid = Grid::cube(&lo, &hi, 2 * half + 1).unwrap();
    (u, x0, xbar0, grid)
}

fn ac6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (mut held, mut violated, mut trivial, mut errors) = (0, 0, 0, Vec::new());
    for i in 0..200 {
        let (u, x0, xbar0, grid) = containment_instance(&mut rng);
        let run = || -> cgeom::Result<(bool, usize)> {
            let s0 = contact_set(&u, &x0, &xbar0, &grid, 1e-10)?;
            let ext = exterior_sphere_point(&s0)?;
            Ok((containment_test(&u, &x0, &xbar0, &ext.x_e, 1e-10)?, s0.points.len()))
        };
        match run() {
            Ok((true, pts)) => {
                held += 1;
                if pts == 1 {
                    trivial += 1;
                }
            }
            Ok((false, _)) => violated += 1,
            Err(e) => errors.push(format!("#{i}: {e}")),
        }
    }
    let mut detail = format!("{held}/200 hold, {violated} violations, {trivial} singleton contact sets");
    if !errors.is_empty() {
        detail += &format!("; {} errors, first {}", errors.len(), errors[0]);
    }
    outcome(held == 200 && violated == 0, detail)
}

// ---------------------------------------------------------------------------------------------
// 7. construction harness

fn ac7() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();

    let ds = dyadic(3, 7);
    let cfg = ConstructionConfig::new(2, 1, ds[0], 1.0, 1.0, Mode::Euclidean);
    match scaling_check(&ds, &|d| build_sets(&cfg.with_d(d), d * d), 1_000_000, DEFAULT_WINDOW) {
        Ok(rep) => {
            let oracle_ok = rep.rows.iter().all(|r| r.oracle_z.abs() <= 4.0);
            pass &= rep.bounded && oracle_ok;
            let rows: Vec<String> = rep
                .rows
                .iter()
                .map(|r| {
                    format!(
                        "d={} Q {:.3e}±{:.1e} Q̄ {:.3e}±{:.1e} (coarea {:.3e}, z {:+.2}) ratio_Q {:.3} ratio_cyl {:.3}",
                        r.d,
                        r.vol_q.estimate,
                        r.vol_q.ci95,
                        r.vol_qbar.estimate,
                        r.vol_qbar.ci95,
                        r.coarea_qbar,
                        r.oracle_z,
                        r.ratio_q_normalized,
                        r.ratio_cyl_normalized
                    )
                })
                .collect();
            parts.push(format!("scaling within [1/4, 4]: {}, oracle |z| ≤ 4: {oracle_ok}", rep.bounded));
            for r in rows {
                println!("      {r}");
            }
        }
        Err(e) => {
            pass = false;
            parts.push(format!("scaling: {e}"));
        }
    }

    // probe: f measured on the Lipschitz instance (f/d bounded below) for k ≥ n/2, f = d² for k < n/2
    let sweep = dyadic(3, 7);
    let grid = WGrid { res: 11, dir_res: 5, ..Default::default() };
    let mut probe_ok = true;
    let mut flags = Vec::new();
    for mode in [Mode::Euclidean, Mode::General] {
        for (n, k) in [(2, 1), (3, 2), (4, 2), (4, 3)] {
            let inst = EuclideanInstance { n, k, r0: 0.5, big_r0: 1.0 };
            let f = |d: f64| {
                let c = ConstructionConfig::new(n, k, d, 0.5, 1.0, Mode::Euclidean);
                f_of_d(&|x| Ok(inst.u(x)), &c, &grid).map(|r| r.f).unwrap_or(f64::NAN)
            };
            let r = contradiction_probe(n, k, mode, &sweep, &f, DEFAULT_WINDOW);
            probe_ok &= r.flag;
            flags.push(format!("{mode:?} n={n} k={k}: {}", r.flag));
        }
        for (n, k) in [(3, 1), (4, 1), (5, 2), (5, 1)] {
            let r = contradiction_probe(n, k, mode, &sweep, &|d| d * d, DEFAULT_WINDOW);
            probe_ok &= !r.flag;
            flags.push(format!("{mode:?} n={n} k={k} f=d²: {}", r.flag));
        }
    }
    pass &= probe_ok;
    parts.push(format!("probe flags correct: {probe_ok} ({})", flags.join(", ")));

    match inverse_square_instance(2, 1, 0.25, 0.25, 3) {
        Ok(inst) => {
            let cfg = ConstructionConfig::new(2, 1, 0.125, 0.25, 0.25, Mode::General);
            let grid = WGrid { half_width: 0.25, res: 41, dir_res: 5 };
            match barrier_schedule(&inst.chart(), &cfg, &dyadic(3, 7), &|c| inst.sets(c, &grid), 16, 48) {
                Ok(s) => {
                    let worst = s.reports.iter().flat_map(|r| r.cases.iter().map(|c| c.margin)).fold(f64::NEG_INFINITY, f64::max);
                    pass &= s.ok && s.halvings <= MAX_HALVINGS;
                    parts.push(format!("barrier on inverse_square: ok {} after {} halvings, worst margin {worst:.2e}", s.ok, s.halvings));
                }
                Err(e) => {
                    pass = false;
                    parts.push(format!("barrier: {e}"));
                }
            }
        }
        Err(e) => {
            pass = false;
            parts.push(format!("inverse_square instance: {e}"));
        }
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, &str, f64, fn() -> Outcome); 7] = [
        ("AC1", "closed forms for the inverse-square cost", 10.0, ac1),
        ("AC2", "classification verdicts", 60.0, ac2),
        ("AC3", "Loeper maximum principle suite", 300.0, ac3),
        ("AC4", "semi-discrete OT vs LP oracle", f64::INFINITY, ac4),
        ("AC5", "degeneracy probe", f64::INFINITY, ac5),
        ("AC6", "containment at the exterior sphere point", f64::INFINITY, ac6),
        ("AC7", "construction harness", 600.0, ac7),
    ];
    // ACCEPTANCE_ONLY=AC1,AC5 restricts the run
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').map(|t| t.trim().to_string()).collect());
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, budget, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|t| t == id)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let res = panic::catch_unwind(AssertUnwindSafe(run));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match res {
            Ok(o) => (o.pass && secs <= budget, o.detail),
            Err(e) => {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                (false, format!("panicked: {}", msg.unwrap_or_default()))
            }
        };
        let limit = if budget.is_finite() { format!(" (budget {budget:.0} s)") } else { String::new() };
        println!("{id} {} {name}: {detail} [{secs:.1} s{limit}]", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
