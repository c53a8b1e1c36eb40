//! The verification suites run by `ipslab run`.

use std::path::{Path, PathBuf};

use ipslab_core::dynamics::{check_conditions, detailed_balance_defect, generator_matrix, GeneratorMatrix};
use ipslab_core::entropy::{
    boundary_bound, entropy_loss_finite, finite_entropy_loss, g_tilde, jensen_monotone_sequence, place_boxes,
    reversible_decomposition, s_r_decomposition, specific_energy_loss, specific_energy_loss_direct,
    REVERSIBILITY_TOL,
};
use ipslab_core::evolve::{evolve, run_trajectory, spectral_gap, stationary};
use ipslab_core::{torus_gibbs, DenseMeasure, Error, Window};
use serde::Serialize;

use crate::config::{Experiment, Suite};
use crate::output::{num, write_csv, write_json, Provenance};

/// Tolerances of the suite assertions.
pub const MONOTONE_TOL: f64 = 1e-10;
pub const DECOMPOSITION_TOL: f64 = 1e-8;
pub const JENSEN_TOL: f64 = 1e-9;
pub const GTILDE_TOL: f64 = 1e-9;
pub const IDENTITY_TOL: f64 = 1e-8;
pub const ATTRACTOR_TOL: f64 = 1e-5;
pub const ATTRACTOR_MULTIPLES: [f64; 3] = [10.0, 20.0, 50.0];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    pub invariant: String,
    pub witness: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub suite: Suite,
    pub passed: bool,
    pub failures: Vec<Failure>,
    pub files: Vec<PathBuf>,
}

struct Ctx<'a> {
    exp: &'a Experiment,
    dir: &'a Path,
    prov: &'a Provenance,
    failures: Vec<Failure>,
    files: Vec<PathBuf>,
}

impl Ctx<'_> {
    fn fail(&mut self, invariant: &str, witness: impl Into<String>) {
        self.failures.push(Failure {
            invariant: invariant.to_string(),
            witness: witness.into(),
        });
    }

    fn check(&mut self, ok: bool, invariant: &str, witness: impl FnOnce() -> String) {
        if !ok {
            let w = witness();
            self.fail(invariant, w);
        }
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), Error> {
        let path = self.dir.join(name);
        let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        write_csv(&path, self.prov, &header, &rows)?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Error> {
        let path = self.dir.join(name);
        write_json(&path, self.prov, value)?;
        self.files.push(path);
        Ok(())
    }

    fn generator(&self) -> Result<GeneratorMatrix, Error> {
        generator_matrix(&self.exp.rates, &self.exp.torus)
    }

    /// Torus Gibbs measure of the model when it is stationary, otherwise the
    /// unique stationary measure.
    fn reference(&self, q: &GeneratorMatrix) -> Result<DenseMeasure, Error> {
        let mu = torus_gibbs(self.exp.spec.potential(), &self.exp.torus)?;
        let flow = q.left_mul(mu.weights());
        if flow.iter().all(|x| x.abs() <= 1e-12) {
            return Ok(mu);
        }
        let mut st = stationary(q)?;
        if st.len() != 1 {
            return Err(Error::Indeterminate(format!(
                "the model potential is not stationary and there are {} stationary measures",
                st.len()
            )));
        }
        Ok(st.remove(0))
    }

    fn gap(&self, q: &GeneratorMatrix) -> Result<f64, Error> {
        Ok(spectral_gap(q)?.rate)
    }

    fn grid(&self, q: &GeneratorMatrix) -> Result<Vec<f64>, Error> {
        let t = &self.exp.config.time;
        if let Some(ts) = &t.times {
            return Ok(ts.clone());
        }
        let end = match t.t_end {
            Some(e) => e,
            None => t.gap_multiple.unwrap_or(50.0) / self.gap(q)?,
        };
        Ok((1..=t.points).map(|k| end * k as f64 / t.points as f64).collect())
    }

    fn n_max(&self) -> u32 {
        if let Some(n) = self.exp.config.jensen.n_max {
            return n;
        }
        let side = self.exp.torus.min_side();
        (1..=2u32).rev().find(|&n| (1usize << (n + 1)) - 1 <= side).unwrap_or(0)
    }
}

/// Runs one suite, writing its artifacts into `dir`. Errors from the
/// numerics are reported as failures; only I/O errors escape.
pub fn run_suite(exp: &Experiment, suite: Suite, dir: &Path, prov: &Provenance) -> std::io::Result<SuiteOutcome> {
    let mut ctx = Ctx {
        exp,
        dir,
        prov,
        failures: Vec::new(),
        files: Vec::new(),
    };
    let res = match suite {
        Suite::Decay => decay(&mut ctx),
        Suite::Decomposition => decomposition(&mut ctx),
        Suite::Jensen => jensen(&mut ctx),
        Suite::Gtilde => gtilde(&mut ctx),
        Suite::Reversible => reversible(&mut ctx),
        Suite::Attractor => attractor(&mut ctx),
        Suite::Conditions => conditions(&mut ctx),
    };
    match res {
        Ok(()) => {}
        Err(Error::Io(e)) => return Err(e),
        Err(e) => ctx.fail("computation", e.to_string()),
    }
    Ok(SuiteOutcome {
        suite,
        passed: ctx.failures.is_empty(),
        failures: ctx.failures,
        files: ctx.files,
    })
}

fn decay(ctx: &mut Ctx) -> Result<(), Error> {
    let q = ctx.generator()?;
    let mu = ctx.reference(&q)?;
    let grid = ctx.grid(&q)?;
    let tr = run_trajectory(&ctx.exp.initial, &ctx.exp.rates, &grid, &ctx.exp.windows, &mu)?;
    let mut header = vec!["t".to_string(), "h".to_string()];
    for k in 1..tr.windows.len() {
        header.push(format!("h_w{k}"));
    }
    header.push("g".into());
    header.push("violation".into());
    let rows: Vec<Vec<String>> = (0..tr.times.len())
        .map(|k| {
            let mut r = vec![num(tr.times[k])];
            r.extend(tr.h[k].iter().map(|&h| num(h)));
            r.push(num(tr.g[k]));
            r.push(tr.violations[k][0].to_string());
            r
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    ctx.csv("decay.csv", &header_refs, rows)?;
    let body: serde_json::Value = serde_json::from_str(&tr.to_json(ctx.exp.config.output.json_measures)?)?;
    ctx.json("decay.json", &body)?;
    let first_bad = tr.violations.iter().position(|v| v[0]);
    ctx.check(tr.monotone, "full-torus relative entropy is non-increasing", || {
        let k = first_bad.unwrap_or(0);
        format!(
            "h rose from {} to {} at t = {} (tolerance {MONOTONE_TOL:e})",
            tr.h[k.saturating_sub(1)][0],
            tr.h[k][0],
            tr.times[k]
        )
    });
    Ok(())
}

#[derive(Serialize)]
struct DecompositionReport {
    g: f64,
    energy_part: f64,
    entropy_part: f64,
    rho_origin: f64,
    rho_direct: f64,
    translation_defect: f64,
    defect: f64,
    sr_defect: Option<f64>,
}

fn decomposition(ctx: &mut Ctx) -> Result<(), Error> {
    let nu = &ctx.exp.initial;
    let rates = &ctx.exp.rates;
    let mu = torus_gibbs(ctx.exp.spec.potential(), &ctx.exp.torus)?;
    let full = ctx.exp.torus.full_window();
    let n = ctx.exp.torus.len() as f64;
    let g = entropy_loss_finite(nu, &mu, rates, &full)?.value;
    let rho_direct = specific_energy_loss_direct(nu, rates, &mu)?;
    let rho_origin = specific_energy_loss(nu, rates, &ctx.exp.spec)?;
    let ent = finite_entropy_loss(nu, rates, &full)?.value;
    let defect = (g - (rho_direct * n + ent)).abs();
    let sr = match place_boxes(&ctx.exp.torus, 1) {
        Ok(_) => Some(s_r_decomposition(nu, rates, 1)?.defect),
        Err(_) => None,
    };
    let rep = DecompositionReport {
        g,
        energy_part: rho_direct * n,
        entropy_part: ent,
        rho_origin,
        rho_direct,
        translation_defect: nu.translation_defect()?,
        defect,
        sr_defect: sr,
    };
    let mut rows = vec![
        vec!["g".into(), num(g)],
        vec!["energy_part".into(), num(rep.energy_part)],
        vec!["entropy_part".into(), num(ent)],
        vec!["rho_origin".into(), num(rho_origin)],
        vec!["defect".into(), num(defect)],
    ];
    if let Some(s) = sr {
        rows.push(vec!["sr_defect".into(), num(s)]);
    }
    ctx.csv("decomposition.csv", &["quantity", "value"], rows)?;
    ctx.json("decomposition.json", &rep)?;
    ctx.check(defect <= DECOMPOSITION_TOL, "g = energy part + entropy part", || {
        format!("defect {defect:e} (g = {g}, energy {}, entropy {ent})", rep.energy_part)
    });
    if let Some(s) = sr {
        ctx.check(s <= DECOMPOSITION_TOL, "s_n + r_n = |Lambda_n| g_tilde", || format!("defect {s:e}"));
    }
    Ok(())
}

fn jensen(ctx: &mut Ctx) -> Result<(), Error> {
    let n_max = ctx.n_max();
    if n_max == 0 {
        ctx.fail("box fits the torus", format!("torus sides {:?} hold no box", ctx.exp.torus.sides()));
        return Ok(());
    }
    let nu = &ctx.exp.initial;
    let ti = nu.translation_defect()?;
    ctx.check(ti <= 1e-12, "initial measure is translation invariant", || {
        format!("translation defect {ti:e}; use a translation_average recipe")
    });
    let seq = jensen_monotone_sequence(nu, &ctx.exp.rates, n_max)?;
    let rows = seq
        .points
        .iter()
        .map(|p| vec![p.n.to_string(), num(p.f_n), num(p.g), num(p.normalized)])
        .collect();
    ctx.csv("jensen.csv", &["n", "f_n", "G", "normalized_f"], rows)?;
    ctx.json("jensen.json", &seq)?;
    let inc = seq.max_increase;
    ctx.check(inc <= JENSEN_TOL, "normalized f_n is non-increasing", || format!("largest increase {inc:e}"));
    let exc = seq.max_doubling_excess;
    ctx.check(exc <= JENSEN_TOL, "f_n <= 2^d f_(n-1)", || format!("largest excess {exc:e}"));
    Ok(())
}

#[derive(Serialize)]
struct GtildeRow {
    n: u32,
    g_tilde: f64,
    g_box_per_site: f64,
    bound: f64,
    margin: f64,
}

fn gtilde(ctx: &mut Ctx) -> Result<(), Error> {
    let n_max = ctx.n_max();
    if n_max == 0 {
        ctx.fail("box fits the torus", format!("torus sides {:?} hold no box", ctx.exp.torus.sides()));
        return Ok(());
    }
    let nu = &ctx.exp.initial;
    let mut out = Vec::new();
    for n in 1..=n_max {
        let b = place_boxes(&ctx.exp.torus, n)?;
        let gt = g_tilde(nu, &ctx.exp.rates, n)?.value;
        let g = finite_entropy_loss(nu, &ctx.exp.rates, &b.outer)?.value / b.outer.len() as f64;
        let bound = boundary_bound(&ctx.exp.rates, n)?;
        out.push(GtildeRow {
            n,
            g_tilde: gt,
            g_box_per_site: g,
            bound,
            margin: gt - (g - bound),
        });
    }
    let rows = out
        .iter()
        .map(|r| vec![r.n.to_string(), num(r.g_tilde), num(r.g_box_per_site), num(r.bound), num(r.margin)])
        .collect();
    ctx.csv("gtilde.csv", &["n", "g_tilde", "g_box_per_site", "bound", "margin"], rows)?;
    ctx.json("gtilde.json", &out)?;
    for r in &out {
        ctx.check(r.margin >= -GTILDE_TOL, "g_tilde >= g/|Lambda_n| - boundary bound", || {
            format!("n = {}: margin {:e}", r.n, r.margin)
        });
    }
    Ok(())
}

fn reversible(ctx: &mut Ctx) -> Result<(), Error> {
    match reversible_decomposition(&ctx.exp.initial, &ctx.exp.rates, &ctx.exp.spec, 1) {
        Err(Error::NotReversible(db)) => {
            ctx.csv("reversible.csv", &["quantity", "value"], vec![vec!["detailed_balance_defect".into(), num(db)]])?;
            ctx.fail(
                "detailed balance with respect to the model potential",
                format!("defect {db:e} exceeds {REVERSIBILITY_TOL:e}"),
            );
            Ok(())
        }
        Err(e) => Err(e),
        Ok(d) => {
            let rows = vec![
                vec!["r_rev".into(), num(d.r_rev)],
                vec!["rho".into(), num(d.rho)],
                vec!["identity_defect".into(), num(d.identity_defect)],
                vec!["split_defect".into(), num(d.split_defect)],
            ];
            ctx.csv("reversible.csv", &["quantity", "value"], rows)?;
            let (id, split) = (d.identity_defect, d.split_defect);
            ctx.json("reversible.json", &d)?;
            ctx.check(id <= IDENTITY_TOL, "r + rho = 0", || format!("|r + rho| = {id:e}"));
            ctx.check(split <= DECOMPOSITION_TOL, "s_n + r_n = |Lambda_n| g_tilde", || format!("defect {split:e}"));
            Ok(())
        }
    }
}

/// Nested windows `{0}, {0,1}, ...` up to six sites.
pub fn default_weak_schedule(n_sites: usize) -> Vec<Window> {
    (1..=n_sites.min(6)).map(|k| Window::new((0..k).collect())).collect()
}

fn attractor(ctx: &mut Ctx) -> Result<(), Error> {
    let q = ctx.generator()?;
    let mu = ctx.reference(&q)?;
    let gap = ctx.gap(&q)?;
    let schedule = if ctx.exp.windows.is_empty() {
        default_weak_schedule(ctx.exp.torus.len())
    } else {
        ctx.exp.windows.clone()
    };
    let mut cur = ctx.exp.initial.clone();
    let mut last = 0.0;
    let mut rows = Vec::new();
    let mut dist = Vec::new();
    for m in ATTRACTOR_MULTIPLES {
        let t = m / gap;
        cur = evolve(&cur, &q, t - last)?;
        last = t;
        let d = cur.weak_distance(&mu, &schedule)?;
        dist.push(d);
        rows.push(vec![num(t), num(m), num(d)]);
    }
    ctx.csv("attractor.csv", &["t", "gap_multiple", "weak_distance"], rows)?;
    let decreasing = dist.windows(2).all(|w| w[1] <= w[0]);
    ctx.check(decreasing, "weak distance to the stationary measure decreases", || format!("{dist:?}"));
    let fin = *dist.last().unwrap();
    ctx.check(fin <= ATTRACTOR_TOL, "weak distance at 50/gap is small", || {
        format!("{fin:e} > {ATTRACTOR_TOL:e}")
    });
    Ok(())
}

#[derive(Serialize)]
struct ConditionsOut {
    #[serde(flatten)]
    report: ipslab_core::ConditionReport,
    reversible: bool,
    detailed_balance_defect: f64,
    gibbs_stationary: bool,
}

fn conditions(ctx: &mut Ctx) -> Result<(), Error> {
    let rep = check_conditions(&ctx.exp.rates)?;
    let db = detailed_balance_defect(&ctx.exp.rates, &ctx.exp.spec, &ctx.exp.torus)?;
    let q = ctx.generator()?;
    let mu = torus_gibbs(ctx.exp.spec.potential(), &ctx.exp.torus)?;
    let stat = q.left_mul(mu.weights()).iter().all(|x| x.abs() <= 1e-12);
    let out = ConditionsOut {
        report: rep.clone(),
        reversible: db <= REVERSIBILITY_TOL,
        detailed_balance_defect: db,
        gibbs_stationary: stat,
    };
    let irr = match rep.irreducible {
        Some(b) => b.to_string(),
        None => "unknown".into(),
    };
    let rows = vec![
        vec!["finitely_many_types".into(), rep.finitely_many_types.to_string()],
        vec!["uniform_continuity".into(), rep.uniform_continuity.to_string()],
        vec!["no_traps".into(), rep.no_traps.to_string()],
        vec!["min_rate".into(), rep.min_rate.to_string()],
        vec!["irreducible".into(), irr],
        vec!["conserved_quantity".into(), rep.conserved_quantity.to_string()],
        vec!["reversible".into(), out.reversible.to_string()],
        vec!["detailed_balance_defect".into(), num(db)],
        vec!["gibbs_stationary".into(), stat.to_string()],
    ];
    ctx.csv("conditions.csv", &["condition", "value"], rows)?;
    ctx.json("conditions.json", &out)?;
    ctx.check(rep.finitely_many_types, "finitely many transition types", String::new);
    ctx.check(rep.uniform_continuity, "uniform continuity", String::new);
    ctx.check(rep.min_rate, "minimal rate", String::new);
    ctx.check(rep.no_traps, "no trap states", || match &rep.trap_witness {
        Some(w) => format!("rule {} context {} target {}", w.rule, w.context, w.target),
        None => String::new(),
    });
    Ok(())
}
