//! The acceptance criteria, runnable at two scales.

use std::path::Path;
use std::time::Instant;

use ipslab_core::dynamics::{
    check_conditions, contact, cyclic_clock, detailed_balance_defect, exclusion, generator_matrix,
    glauber_heat_bath, glauber_metropolis, flip,
};
use ipslab_core::entropy::{
    boundary_bound, entropy_loss_finite, finite_entropy_loss, g_tilde, jensen_monotone_sequence, place_boxes,
    reversible_decomposition, specific_energy_loss,
};
use ipslab_core::evolve::{entropy_derivative_oracle, evolve, run_trajectory, spectral_gap, stationary};
use ipslab_core::gibbs::{conditional_ratio_defect, dlr_defect};
use ipslab_core::{torus_gibbs, DenseMeasure, Potential, RateFamily, Result, Specification, Torus, Window};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::suites::default_weak_schedule;
use crate::{cmd_run, RunOptions, EXIT_PASS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Scale {
    Small,
    Medium,
}

impl Scale {
    fn times(self, n: usize) -> usize {
        match self {
            Scale::Small => n,
            Scale::Medium => 2 * n,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriterionOutcome {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2}  {}  {:<28} {:>7.2}s  {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.seconds,
            self.detail
        )
    }
}

pub const TITLES: [&str; 12] = [
    "entropy decay",
    "formula vs oracle",
    "closed-form spot value",
    "energy/entropy decomposition",
    "Jensen monotonicity",
    "g_tilde >= g",
    "reversible identity",
    "irreversibility witness",
    "zero loss implies Gibbs",
    "attractor",
    "condition checkers",
    "determinism",
];

/// Runs criterion `id` (1 to 12).
pub fn run_criterion(id: u8, scale: Scale, seed: u64) -> CriterionOutcome {
    let start = Instant::now();
    let res = match id {
        1 => decay(scale, seed),
        2 => oracle(scale, seed),
        3 => spot_value(),
        4 => decomposition(scale, seed),
        5 => jensen(scale, seed),
        6 => gtilde(scale, seed),
        7 => reversible(scale, seed),
        8 => irreversible(),
        9 => zero_loss(scale),
        10 => attractor(scale, seed),
        11 => conditions(),
        12 => determinism(seed),
        _ => Ok((false, format!("no criterion {id}"))),
    };
    let (passed, detail) = res.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionOutcome {
        id,
        title: TITLES.get(id as usize - 1).copied().unwrap_or("?"),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn verify_all(scale: Scale, seed: u64) -> Vec<CriterionOutcome> {
    (1..=12).map(|k| run_criterion(k, scale, seed)).collect()
}

type Outcome = Result<(bool, String)>;

fn ising(beta: f64, field: f64) -> Specification {
    Specification::new(Potential::ising(beta, field, 1)).expect("valid Ising potential")
}

fn random_soft(t: &Torus, q: usize, rng: &mut ChaCha8Rng, eps: f64) -> Result<DenseMeasure> {
    DenseMeasure::random(t, t.full_window(), q, rng)?.soften(eps)
}

fn random_ti(t: &Torus, q: usize, rng: &mut ChaCha8Rng, eps: f64) -> Result<DenseMeasure> {
    DenseMeasure::random(t, t.full_window(), q, rng)?
        .translation_average()?
        .soften(eps)
}

fn decay(scale: Scale, seed: u64) -> Outcome {
    let spec = ising(0.5, 0.0);
    let t = Torus::ring(scale.times(6).min(8))?;
    let rates = glauber_heat_bath(&spec)?;
    let mu = torus_gibbs(spec.potential(), &t)?;
    let gap = spectral_gap(&generator_matrix(&rates, &t)?)?.rate;
    let grid: Vec<f64> = (1..=50).map(|k| k as f64 * (50.0 / gap) / 50.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ok, mut worst_rise, mut worst_final) = (true, 0.0f64, 0.0f64);
    for _ in 0..scale.times(10) {
        let nu = random_soft(&t, 2, &mut rng, 0.05)?;
        let tr = run_trajectory(&nu, &rates, &grid, &[], &mu)?;
        let fin = tr.h.last().unwrap()[0];
        ok &= tr.monotone && fin <= 1e-6;
        worst_rise = worst_rise.max(tr.max_increase);
        worst_final = worst_final.max(fin);
    }
    Ok((
        ok,
        format!("N={} gap={gap:.4} max rise {worst_rise:.1e} max h(50/gap) {worst_final:.1e}", t.len()),
    ))
}

fn oracle(scale: Scale, seed: u64) -> Outcome {
    let models: Vec<(RateFamily, usize, Option<Specification>)> = vec![
        (glauber_heat_bath(&ising(0.5, 0.2))?, 2, Some(ising(0.5, 0.2))),
        (glauber_metropolis(&ising(0.4, -0.1))?, 2, Some(ising(0.4, -0.1))),
        (cyclic_clock(3, 1.0, 0.0, 1)?, 3, None),
        (cyclic_clock(3, 1.0, 0.4, 1)?, 3, None),
        (exclusion(0.7, 0.3, 1)?, 2, None),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x02);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for k in 0..scale.times(25) {
        let (rates, q, spec) = &models[k % models.len()];
        let t = Torus::ring(if *q == 3 { 4 } else { 5 })?;
        let mu = match spec {
            Some(s) => torus_gibbs(s.potential(), &t)?,
            None => DenseMeasure::uniform(&t, t.full_window(), *q)?,
        };
        let nu = random_soft(&t, *q, &mut rng, 0.05)?;
        let len = rng.random_range(1..=t.len());
        let first = rng.random_range(0..t.len());
        let lam = Window::new((0..len).map(|j| (first + j) % t.len()).collect());
        let gm = generator_matrix(rates, &t)?;
        let fd = entropy_derivative_oracle(&nu, &mu, &gm, &lam)?;
        let exact = entropy_loss_finite(&nu, &mu, rates, &lam)?.value;
        let err = (fd.value - exact).abs();
        let tol = 1e-6f64.max(1e-4 * exact.abs());
        ok &= err <= tol;
        worst = worst.max(err / tol);
    }
    Ok((ok, format!("{} pairs, worst error/tolerance {worst:.2e}", scale.times(25))))
}

fn spot_value() -> Outcome {
    let p: f64 = 0.75;
    let closed = (1.0 - 2.0 * p) * (p / (1.0 - p)).ln();
    let mut worst: f64 = 0.0;
    for n in [1, 3] {
        let t = Torus::ring(n)?;
        let w = t.full_window();
        let nu = DenseMeasure::product(&t, w.clone(), &[p, 1.0 - p])?;
        let mu = DenseMeasure::uniform(&t, w.clone(), 2)?;
        let v = entropy_loss_finite(&nu, &mu, &flip(2, 1.0, 1)?, &w)?.value / n as f64;
        worst = worst.max((v - closed).abs());
    }
    let printed = (closed * 1e6).round() / 1e6;
    Ok((
        worst <= 1e-9 && printed == -0.549306,
        format!("closed form {closed:.9}, max deviation {worst:.1e}"),
    ))
}

fn decomposition(scale: Scale, seed: u64) -> Outcome {
    let spec = ising(0.5, 0.2);
    let zero = Specification::new(Potential::zero(3, 1))?;
    let cases = [
        (glauber_heat_bath(&spec)?, spec, Torus::ring(5)?, 2),
        (cyclic_clock(3, 1.0, 0.0, 1)?, zero, Torus::ring(4)?, 3),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x04);
    let mut worst: f64 = 0.0;
    for (rates, spec, t, q) in &cases {
        let mu = torus_gibbs(spec.potential(), t)?;
        let full = t.full_window();
        for _ in 0..scale.times(10) {
            let nu = random_ti(t, *q, &mut rng, 0.05)?;
            let g = entropy_loss_finite(&nu, &mu, rates, &full)?.value;
            let rho = specific_energy_loss(&nu, rates, spec)?;
            let ent = finite_entropy_loss(&nu, rates, &full)?.value;
            worst = worst.max((g - (rho * t.len() as f64 + ent)).abs());
        }
    }
    Ok((worst <= 1e-8, format!("max defect {worst:.1e}")))
}

fn jensen(scale: Scale, seed: u64) -> Outcome {
    let t = Torus::ring(7)?;
    let spec = ising(0.5, 0.2);
    let mut models = vec![(glauber_heat_bath(&spec)?, 2), (cyclic_clock(2, 1.0, 0.3, 1)?, 2)];
    if scale == Scale::Medium {
        models.push((cyclic_clock(3, 1.0, 0.0, 1)?, 3));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05);
    let (mut inc, mut exc) = (0.0f64, 0.0f64);
    let mut count = 0;
    for (rates, q) in &models {
        for _ in 0..scale.times(20) {
            let nu = random_ti(&t, *q, &mut rng, 0.05)?;
            let s = jensen_monotone_sequence(&nu, rates, 2)?;
            if s.max_increase.is_nan() || s.max_doubling_excess.is_nan() {
                return Ok((false, "indeterminate f_n".into()));
            }
            inc = inc.max(s.max_increase);
            exc = exc.max(s.max_doubling_excess);
            count += 1;
        }
    }
    Ok((
        inc <= 1e-9,
        format!("{count} measures, n in 1..=2, max increase {inc:.1e}, max doubling excess {exc:.1e}"),
    ))
}

fn gtilde(scale: Scale, seed: u64) -> Outcome {
    let t = Torus::ring(7)?;
    let spec = ising(0.5, 0.2);
    let models = [glauber_heat_bath(&spec)?, cyclic_clock(2, 1.0, 0.3, 1)?];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x06);
    let mut worst = f64::INFINITY;
    for rates in &models {
        for _ in 0..scale.times(20) {
            let nu = random_soft(&t, 2, &mut rng, 0.1)?;
            for n in [1, 2] {
                let b = place_boxes(&t, n)?;
                let gt = g_tilde(&nu, rates, n)?.value;
                let g = finite_entropy_loss(&nu, rates, &b.outer)?.value / b.outer.len() as f64;
                worst = worst.min(gt - (g - boundary_bound(rates, n)?));
            }
        }
    }
    Ok((worst >= -1e-9, format!("smallest margin {worst:.3e}")))
}

fn reversible(scale: Scale, seed: u64) -> Outcome {
    let t = Torus::ring(7)?;
    let spec = ising(0.4, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x07);
    let (mut id, mut db) = (0.0f64, 0.0f64);
    for rates in [glauber_heat_bath(&spec)?, glauber_metropolis(&spec)?] {
        db = db.max(detailed_balance_defect(&rates, &spec, &t)?);
        for _ in 0..scale.times(10) {
            let nu = random_soft(&t, 2, &mut rng, 0.05)?;
            id = id.max(reversible_decomposition(&nu, &rates, &spec, 1)?.identity_defect);
        }
    }
    Ok((id <= 1e-8 && db <= 1e-12, format!("max |r+rho| {id:.1e}, detailed balance defect {db:.1e}")))
}

fn irreversible() -> Outcome {
    let clock = cyclic_clock(3, 1.0, 0.0, 1)?;
    let zero = Specification::new(Potential::zero(3, 1))?;
    let mut dist: f64 = 0.0;
    let mut unique = true;
    for n in [1, 3] {
        let t = Torus::ring(n)?;
        let st = stationary(&generator_matrix(&clock, &t)?)?;
        unique &= st.len() == 1;
        let u = DenseMeasure::uniform(&t, t.full_window(), 3)?;
        dist = dist.max(st.iter().map(|m| m.sup_distance(&u)).fold(0.0, f64::max));
    }
    let db = detailed_balance_defect(&clock, &zero, &Torus::ring(1)?)?;
    Ok((
        unique && dist <= 1e-10 && db >= 0.1,
        format!("stationary-uniform distance {dist:.1e}, detailed balance defect {db:.4} (one site)"),
    ))
}

fn zero_loss(scale: Scale) -> Outcome {
    let t = Torus::ring(scale.times(6).min(8))?;
    let spec = ising(0.5, 0.2);
    let (mut cr, mut dlr) = (0.0f64, 0.0f64);
    let mut unique = true;
    for rates in [glauber_heat_bath(&spec)?, glauber_metropolis(&spec)?] {
        let st = stationary(&generator_matrix(&rates, &t)?)?;
        unique &= st.len() == 1;
        for m in &st {
            for i in 0..t.len() {
                let w = Window::single(i);
                cr = cr.max(conditional_ratio_defect(m, &spec, &w)?);
                dlr = dlr.max(dlr_defect(m, &spec, &w)?);
            }
        }
    }
    Ok((
        unique && cr <= 1e-8 && dlr <= 1e-10,
        format!("N={}: conditional ratio defect {cr:.1e}, DLR defect {dlr:.1e}", t.len()),
    ))
}

fn attractor(scale: Scale, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0a);
    let spec = ising(0.5, 0.0);
    let cases = [
        (glauber_heat_bath(&spec)?, Torus::ring(scale.times(6).min(8))?, 2, Some(spec)),
        (cyclic_clock(3, 1.0, 0.0, 1)?, Torus::ring(4)?, 3, None),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for (rates, t, q, spec) in &cases {
        let gm = generator_matrix(rates, t)?;
        let gap = spectral_gap(&gm)?.rate;
        let target = match spec {
            Some(s) => torus_gibbs(s.potential(), t)?,
            None => DenseMeasure::uniform(t, t.full_window(), *q)?,
        };
        let schedule = default_weak_schedule(t.len());
        let mut cur = random_ti(t, *q, &mut rng, 0.01)?;
        let mut last = 0.0;
        let mut d = Vec::new();
        for m in [10.0, 20.0, 50.0] {
            cur = evolve(&cur, &gm, m / gap - last)?;
            last = m / gap;
            d.push(cur.weak_distance(&target, &schedule)?);
        }
        let dec = d.windows(2).all(|w| w[1] < w[0] || w[1] == 0.0);
        let fin = d[2];
        ok &= fin <= 1e-5 && (spec.is_none() || dec);
        notes.push(format!("{:.1e}/{:.1e}/{:.1e}", d[0], d[1], d[2]));
    }
    Ok((ok, format!("glauber {}, clock {}", notes[0], notes[1])))
}

fn conditions() -> Outcome {
    let spec = ising(0.5, 0.1);
    let mut glauber_ok = true;
    for rates in [glauber_heat_bath(&spec)?, glauber_metropolis(&spec)?] {
        let r = check_conditions(&rates)?;
        glauber_ok &= r.finitely_many_types && r.uniform_continuity && r.no_traps && r.min_rate;
        glauber_ok &= r.irreducible == Some(true);
    }
    let trap = check_conditions(&contact(1.0, 1.0, 1)?)?;
    let trap_ok = !trap.no_traps && trap.trap_witness.is_some();
    let one_way = check_conditions(&exclusion(1.0, 0.0, 1)?)?;
    let one_way_ok = !one_way.no_traps && one_way.trap_witness.is_some();
    let w = trap.trap_witness.map(|w| format!("{}->{}", w.context, w.target)).unwrap_or_default();
    Ok((
        glauber_ok && trap_ok && one_way_ok,
        format!("glauber {glauber_ok}, trap witness {w}, one-way exclusion rejected {one_way_ok}"),
    ))
}

/// A decay and Jensen run used for the determinism check.
pub const DETERMINISM_CONFIG: &str = r#"
suites = ["decay", "jensen", "conditions"]
windows = [[0], [0, 1]]

[model]
kind = "glauber_heat_bath"
beta = 0.5

[torus]
sides = [7]

[initial]
kind = "soften"
eps = 0.05
inner = { kind = "translation_average", inner = { kind = "random" } }

[time]
gap_multiple = 20.0
points = 20
"#;

fn determinism(seed: u64) -> Outcome {
    let dir = tempfile::tempdir()?;
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, DETERMINISM_CONFIG)?;
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("out{k}"));
        let rep = cmd_run(
            &cfg,
            &RunOptions {
                seed: Some(seed),
                out: Some(out.clone()),
                parallel_suites: k == 1,
                quiet: true,
            },
        );
        if rep.code != EXIT_PASS {
            return Ok((false, format!("run {k} exited with {}", rep.code)));
        }
        outputs.push(csv_bytes(&out)?);
    }
    let same = outputs[0] == outputs[1] && !outputs[0].is_empty();
    Ok((same, format!("{} CSV files compared byte for byte", outputs[0].len())))
}

fn csv_bytes(dir: &Path) -> std::io::Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if p.extension().is_some_and(|x| x == "csv") {
            out.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p)?));
        }
    }
    out.sort();
    Ok(out)
}
