//! `shl`: batch front end for the superform potential-theory laboratory.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use shl_core::acceptance;
use shl_core::capacity::{self, CapacityProblem, SolverParams};
use shl_core::grid::{self, Mask};
use shl_core::hessmeasure;
use shl_core::lelong;
use shl_core::mconvex;
use shl_core::potential;
use shl_core::report::{self, Bundle};
use shl_core::superalgebra::{self, factorial, FormValue, SymMatrix};
use shl_core::{Current, Grid, HessOptions, MollifierSpec, ScalarField, Stencil, WeightSpec};

use config::Config;

/// Superform potential theory on uniform grids.
///
/// Lengths are in box units (the grid spans [-half_width, half_width]^n);
/// masses are integrals against Lebesgue measure in those units. Every
/// subcommand writes its reports into --out and prints a digest.
///
/// Exit codes: 0 success, 1 hard error, 2 acceptance failure.
#[derive(Parser, Debug)]
#[command(name = "shl", version)]
struct Cli {
    /// RNG seed for sampled audits.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads; 0 uses one per core. Results are bit-stable for a fixed value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output directory for CSV/JSON reports and digest.txt.
    #[arg(long, global = true, default_value = "shl-out")]
    out: PathBuf,
    /// Multiplier applied to every acceptance tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    tol_scale: f64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Eigenvalues and σ-pairings (A^j∧β^{n−j} against β^n/n!) of a symmetric matrix.
    ///
    /// Compares the eigenvalue path with the exterior-algebra engine; the
    /// reported rel_err is |fast − generic|/(1 + ‖A‖∞^j).
    ///
    /// Units: dimensionless matrix entries.
    /// Tolerances: rel_err is expected ≤ 1e-12.
    Algebra(AlgebraArgs),
    /// Samples the weight φ_m on a grid and runs the discrete Γ_m test.
    ///
    /// Writes field.json and profile.csv (`r,phi`). The Γ_m test flags the
    /// most negative σ_j/C(n,j) relative to (1+‖H‖∞)^j below −convexity_tol.
    ///
    /// Units: box units for positions; φ_m in its natural scale.
    /// Tolerances: --convexity-tol (default 1e-3, relative).
    Field(FieldArgs),
    /// Mass of T∧β^{n−m}∧(dd^#φ_m)^k on balls B(a,r).
    ///
    /// Fields with poles are mollified at mollifier·h and ladder_factor·mollifier·h;
    /// the relative gap between the two masses is reported as cauchy_gap.
    ///
    /// Units: radii in box units, mollifier in multiples of h; masses in
    /// Lebesgue measure of the box.
    /// Tolerances: the Γ_m pre-check on the factors uses --convexity-tol
    /// (default 1e-3, relative); harmonic weights (m = 1) need a looser value near the pole.
    Hessian(HessianArgs),
    /// Local potential U of η·T with the Newton kernel, its residual and ν_U ladder.
    ///
    /// η is 1 on B(0,r_in) and 0 outside B(0,r_out). The residual is measured
    /// on the inner region; kappa is the fitted scale in dd^#U ≈ κ·η·T.
    ///
    /// Units: radii in box units; coefficients as densities against Lebesgue measure.
    /// Tolerances: the weak-negativity audit flags sampled pairings above 1e-12 relative.
    Potential(PotentialArgs),
    /// Generalized Lelong ladder ν_T^m(φ_m, r) for a fundamental weight.
    ///
    /// Writes ladder.csv (`r,mass,nu`) and summary.json with the extrapolated
    /// limit and its uncertainty |ν(r_k) − ν(r_{k−1})|.
    ///
    /// Units: radii in box units; levels are φ_m(r); ν is a mass ratio.
    /// Tolerances: factors pass the Γ_m pre-check at --convexity-tol (default
    /// 1e-3, relative); the ladder uncertainty is reported, not thresholded.
    Lelong(LelongArgs),
    /// Ball-in-ball m-Hessian capacity through the weighted extremal function.
    ///
    /// The obstacle solver stops when a sweep changes no node by more than
    /// solver_tol (default 1e-8); route_gap compares the sup over admissible
    /// candidates with the extremal mass.
    ///
    /// Units: radii in box units; capacity in Lebesgue measure of the box.
    /// Tolerances: --solver-tol (default 1e-8); weight m-convexity audit at relative tol 1e-3.
    Capacity(CapacityArgs),
    /// Runs the acceptance criteria and writes criteria.json, details.json, digest.txt.
    ///
    /// Exit code 2 if any criterion fails.
    ///
    /// Units: each criterion reports its value in the units of its tolerance.
    /// Tolerances: the pinned per-criterion values times --tol-scale.
    Verify(VerifyArgs),
    /// Runs an experiment manifest (TOML with [grid], [current], [weights], [task]).
    ///
    /// `[task] kind` names the subcommand; every other key becomes its long flag
    /// (underscores map to dashes). Top-level keys set global flags; `seed` is required.
    ///
    /// Units: as documented by the subcommand named in the manifest.
    /// Tolerances: as documented by that subcommand; `tol_scale` applies globally.
    Run {
        /// Manifest path.
        config: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
struct GridArgs {
    /// Dimension n of the base space.
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Nodes per axis.
    #[arg(long, default_value_t = 21)]
    nodes: usize,
    /// Half side length of the box [-w, w]^n.
    #[arg(long, default_value_t = 1.0)]
    half_width: f64,
}

impl GridArgs {
    fn grid(&self) -> Result<Grid> {
        Ok(Grid::cube(self.n, self.nodes, self.half_width)?)
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum StencilArg {
    /// Second-order, radius 1.
    Second,
    /// Fourth-order, radius 2.
    Fourth,
}

impl From<StencilArg> for Stencil {
    fn from(s: StencilArg) -> Stencil {
        match s {
            StencilArg::Second => Stencil::Second,
            StencilArg::Fourth => Stencil::Fourth,
        }
    }
}

#[derive(Args, Debug)]
struct AlgebraArgs {
    /// Row-major entries of a symmetric n×n matrix, comma separated.
    #[arg(long)]
    matrix: String,
    /// Single power j; all 1..=n when omitted.
    #[arg(long)]
    j: Option<usize>,
}

#[derive(Args, Debug)]
struct FieldArgs {
    /// Weight `m=<m>,n=<n>,a=<x1>,...` (n must match the grid).
    #[arg(long)]
    weight: String,
    #[command(flatten)]
    grid: GridArgs,
    /// Relative Γ_m tolerance.
    #[arg(long, default_value_t = 1e-3)]
    convexity_tol: f64,
    #[arg(long, value_enum, default_value = "second")]
    stencil: StencilArg,
}

#[derive(Args, Debug)]
struct HessianArgs {
    #[arg(long)]
    weight: String,
    /// `unit`, `bump:<r>`, `beta:<q>` or `beta:<q>,bump:<r>`; see `lelong --help`.
    #[arg(long, default_value = "unit")]
    current: String,
    #[command(flatten)]
    grid: GridArgs,
    /// Number of dd^#φ factors; defaults to m+p−n.
    #[arg(long)]
    k: Option<usize>,
    /// Ball radii in box units, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.6,0.4")]
    radii: Vec<f64>,
    /// Mollifier scale in multiples of h.
    #[arg(long, default_value_t = 2.0)]
    mollifier: f64,
    /// Relative Γ_m tolerance for the factor pre-check.
    #[arg(long, default_value_t = 1e-3)]
    convexity_tol: f64,
    #[arg(long, value_enum, default_value = "fourth")]
    stencil: StencilArg,
}

#[derive(Args, Debug)]
struct PotentialArgs {
    /// Current T; see `lelong --help`.
    #[arg(long, default_value = "beta:2,bump:0.8")]
    current: String,
    #[command(flatten)]
    grid: GridArgs,
    /// Cutoff radii r_in,r_out in box units.
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.75")]
    eta: Vec<f64>,
    /// Radii of the ν_U ladder at the origin, decreasing.
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1,0.05")]
    radii: Vec<f64>,
    /// Sub-lattice refinement for the ν_U ladder.
    #[arg(long, default_value_t = 8)]
    sub: usize,
    #[arg(long, value_enum, default_value = "second")]
    stencil: StencilArg,
}

#[derive(Args, Debug)]
struct LelongArgs {
    /// Weight `m=<m>,n=<n>,a=<x1>,...` centred at a.
    #[arg(long)]
    weight: String,
    /// `unit` (T = 1), `bump:<r>` (scalar (1−|x|²/r²)³₊), `beta:<q>` (β^q, bidegree (q,q)),
    /// or `beta:<q>,bump:<r>`.
    #[arg(long, default_value = "unit")]
    current: String,
    #[command(flatten)]
    grid: GridArgs,
    /// Number of ladder levels.
    #[arg(long, default_value_t = 6)]
    ladder: usize,
    /// Largest radius; defaults to 0.8·half_width.
    #[arg(long)]
    r_max: Option<f64>,
    /// Ratio between consecutive radii.
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    /// Mollifier scale in multiples of h.
    #[arg(long, default_value_t = 2.0)]
    mollifier: f64,
    /// Relative Γ_m tolerance for the factor pre-check.
    #[arg(long, default_value_t = 1e-3)]
    convexity_tol: f64,
    #[arg(long, value_enum, default_value = "fourth")]
    stencil: StencilArg,
}

#[derive(Args, Debug)]
struct CapacityArgs {
    /// TOML manifest whose keys fill the flags below.
    #[arg(long)]
    problem: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    /// Hessian level m.
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Radius s of the compact E = B(0,s).
    #[arg(long, default_value_t = 0.3)]
    inner: f64,
    /// Radius R of the domain Ω = B(0,R).
    #[arg(long, default_value_t = 0.95)]
    outer: f64,
    /// `none` (relative capacity) or `quad:<c0>,<c1>` for u = c0 + c1|x|².
    #[arg(long, default_value = "none")]
    weight: String,
    /// Sweep update tolerance.
    #[arg(long, default_value_t = 1e-8)]
    solver_tol: f64,
    #[arg(long, default_value_t = 200_000)]
    max_sweeps: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SuiteArg {
    /// Every criterion.
    Acceptance,
    /// Cheap criteria only, for quick determinism checks.
    Smoke,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "acceptance")]
    suite: SuiteArg,
    /// Restrict to these criterion ids.
    #[arg(long, value_delimiter = ',')]
    only: Vec<u32>,
}

struct Ctx {
    seed: u64,
    out: PathBuf,
    tol_scale: f64,
}

/// Outcome of a subcommand: its bundle and whether acceptance checks held.
struct Outcome {
    bundle: Bundle,
    pass: bool,
}

fn parse_current(spec: &str, g: &Grid) -> Result<Current> {
    let n = g.dim();
    let mut q = None;
    let mut density = vec![1.0; g.len()];
    for part in spec.split(',').map(str::trim) {
        if part == "unit" {
            continue;
        }
        let (k, v) = part.split_once(':').ok_or_else(|| anyhow!("bad current token `{part}`"))?;
        match k {
            "bump" => {
                let r: f64 = v.parse().with_context(|| format!("bad bump radius `{v}`"))?;
                density = (0..g.len())
                    .map(|i| {
                        let s = g.point(i).iter().map(|x| x * x).sum::<f64>() / (r * r);
                        if s < 1.0 {
                            (1.0 - s).powi(3)
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
            "beta" => q = Some(v.parse::<usize>().with_context(|| format!("bad beta power `{v}`"))?),
            _ => bail!("unknown current token `{k}`"),
        }
    }
    match q {
        None | Some(0) => Ok(Current::scalar(g, density)),
        Some(q) if q <= n => Ok(Current::from_form(g, &FormValue::beta(n).pow(q), &density)?),
        Some(q) => bail!("beta power {q} exceeds n = {n}"),
    }
}

fn parse_weight(s: &str) -> Result<WeightSpec> {
    // `m=2,n=4,a=0,0,0,0`: commas before `a=` separate keys.
    let (head, a) = s.split_once("a=").ok_or_else(|| anyhow!("weight needs a=<center>"))?;
    let text = format!("{} a={}", head.replace(',', " "), a.trim());
    Ok(WeightSpec::from_text(&text)?)
}

fn check_grid_dim(w: &WeightSpec, g: &GridArgs) -> Result<()> {
    if w.n != g.n {
        bail!("weight has n = {} but the grid has n = {}", w.n, g.n);
    }
    Ok(())
}

fn algebra(a: &AlgebraArgs) -> Result<Outcome> {
    let vals: Vec<f64> = a.matrix.split(',').map(|t| t.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().context("matrix entries must be numbers")?;
    let n = (vals.len() as f64).sqrt().round() as usize;
    if n * n != vals.len() {
        bail!("{} entries do not form a square matrix", vals.len());
    }
    let m = SymMatrix::from_rows(n, &vals)?;
    let js: Vec<usize> = a.j.map(|j| vec![j]).unwrap_or_else(|| (1..=n).collect());
    let mut rows = vec![];
    let mut worst: f64 = 0.0;
    for j in js {
        let fast = superalgebra::sigma_pairing(&m, j)?;
        let slow = superalgebra::sigma_pairing_generic(&m, j)?;
        let err = (fast - slow).abs() / (1.0 + m.norm_inf().powi(j as i32));
        worst = worst.max(err);
        rows.push(json!({ "j": j, "fast": fast, "generic": slow, "rel_err": err }));
    }
    let mut b = Bundle::new();
    b.add_json("algebra.json", &json!({ "n": n, "eigenvalues": m.eigenvalues(), "pairings": rows }));
    b.note(format!("n={n} worst_rel_err={worst:.3e}"));
    Ok(Outcome { bundle: b, pass: true })
}

fn field(a: &FieldArgs) -> Result<Outcome> {
    let w = parse_weight(&a.weight)?;
    check_grid_dim(&w, &a.grid)?;
    let g = a.grid.grid()?;
    let phi = mconvex::weight_field(&w, &g)?;
    let poles = (0..g.len()).filter(|&i| phi.is_pole(i)).count();
    let finite: Vec<f64> = phi.values.iter().cloned().filter(|v| v.is_finite()).collect();
    let (lo, hi) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let region = Mask::from_fn(&g, |x| grid::dist2(x, &w.a) > (4.0 * g.spacing()).powi(2));
    let conv = mconvex::is_m_convex_with(&phi, w.m, a.convexity_tol, a.stencil.into(), Some(&region))?;
    let mut csv = String::from("r,phi\n");
    for k in 1..=a.grid.nodes / 2 {
        let r = k as f64 * g.spacing();
        csv.push_str(&format!("{r:?},{:?}\n", w.profile(r)));
    }
    let mut b = Bundle::new();
    b.add("profile.csv", csv);
    b.add_json("field.json", &json!({ "weight": w.to_text(), "regime": format!("{:?}", w.regime()), "poles": poles, "min": lo, "max": hi, "convexity": conv }));
    b.note(format!("{} poles={poles} m_convex={}", w.to_text(), conv.passed));
    Ok(Outcome { bundle: b, pass: true })
}

fn hess_opts(stencil: StencilArg, mollifier: f64, convexity_tol: f64, h: f64, seed: u64) -> HessOptions {
    HessOptions { stencil: stencil.into(), mollifier: Some(MollifierSpec::with_scale(mollifier * h)), convexity_tol, seed, ..Default::default() }
}

fn hessian(a: &HessianArgs, ctx: &Ctx) -> Result<Outcome> {
    let w = parse_weight(&a.weight)?;
    check_grid_dim(&w, &a.grid)?;
    let g = a.grid.grid()?;
    let t = parse_current(&a.current, &g)?;
    let k = match a.k {
        Some(k) => k,
        None => (w.m + t.p).checked_sub(g.dim()).ok_or_else(|| anyhow!("m+p−n is negative; pass --k"))?,
    };
    let phi = mconvex::weight_field(&w, &g)?;
    let opts = hess_opts(a.stencil, a.mollifier, a.convexity_tol, g.spacing(), ctx.seed);
    let res = hessmeasure::hessian_measure(&t, w.m, &vec![phi; k], &opts)?;
    let mut csv = String::from("r,mass\n");
    for &r in &a.radii {
        let mass = grid::integrate(&res.measure, &Mask::ball(&g, &w.a, r));
        csv.push_str(&format!("{r:?},{mass:?}\n"));
    }
    let mut b = Bundle::new();
    b.add("masses.csv", csv);
    b.add_json("diagnostics.json", &res.diagnostics);
    b.note(format!("k={k} total_mass={:?} cauchy_gap={:.3e}", res.measure.total_mass(), res.diagnostics.cauchy_gap));
    Ok(Outcome { bundle: b, pass: true })
}

fn potential_cmd(a: &PotentialArgs, ctx: &Ctx) -> Result<Outcome> {
    if a.eta.len() != 2 {
        bail!("--eta takes r_in,r_out");
    }
    let g = a.grid.grid()?;
    let t = parse_current(&a.current, &g)?;
    let eta = potential::cutoff(&g, &vec![0.0; g.dim()], a.eta[0], a.eta[1]);
    let pot = potential::local_potential(&t, &eta, ctx.seed)?;
    let res = potential::residual(&t, &eta, &pot, a.stencil.into())?;
    let lad = potential::potential_lelong_ladder(&pot, &vec![0.0; g.dim()], &a.radii, a.sub)?;
    let mut b = Bundle::new();
    b.add("ladder.csv", lad.to_csv());
    b.add_json(
        "potential.json",
        &json!({
            "trace_sup": pot.trace.max_abs(),
            "negativity_audit": pot.audit,
            "kappa": res.kappa,
            "residual_sup": res.sup_norm(false),
            "fitted_residual_sup": res.sup_norm(true),
            "lelong": lad.summary_json(),
        }),
    );
    b.note(format!("kappa={:.6} residual_sup={:.3e} nu_limit={:.3e}±{:.3e}", res.kappa, res.sup_norm(false), lad.limit, lad.uncertainty));
    Ok(Outcome { bundle: b, pass: pot.audit.passed })
}

fn lelong_cmd(a: &LelongArgs, ctx: &Ctx) -> Result<Outcome> {
    let w = parse_weight(&a.weight)?;
    check_grid_dim(&w, &a.grid)?;
    if a.ladder == 0 || !(0.0 < a.ratio && a.ratio < 1.0) {
        bail!("need --ladder ≥ 1 and 0 < --ratio < 1");
    }
    let g = a.grid.grid()?;
    let t = parse_current(&a.current, &g)?;
    let r0 = a.r_max.unwrap_or(0.8 * a.grid.half_width);
    let radii: Vec<f64> = (0..a.ladder).map(|k| r0 * a.ratio.powi(k as i32)).collect();
    let opts = hess_opts(a.stencil, a.mollifier, a.convexity_tol, g.spacing(), ctx.seed);
    let lad = lelong::nu_m_weight(&t, &w, &radii, &opts)?;
    let mut b = Bundle::new();
    b.add("ladder.csv", lad.to_csv());
    b.add_json("summary.json", &lad.summary_json());
    b.note(format!("{} limit={:?} uncertainty={:?} monotone={}", w.to_text(), lad.limit, lad.uncertainty, lad.monotone));
    Ok(Outcome { bundle: b, pass: true })
}

fn capacity_cmd(a: &CapacityArgs) -> Result<Outcome> {
    let g = a.grid.grid()?;
    let center = vec![0.0; g.dim()];
    let weight = match a.weight.trim() {
        "none" => None,
        s => {
            let rest = s.strip_prefix("quad:").ok_or_else(|| anyhow!("weight must be `none` or `quad:<c0>,<c1>`"))?;
            let (c0, c1) = rest.split_once(',').ok_or_else(|| anyhow!("quad weight needs c0,c1"))?;
            let (c0, c1): (f64, f64) = (c0.trim().parse()?, c1.trim().parse()?);
            Some(ScalarField::from_fn(&g, |x| c0 + c1 * x.iter().map(|v| v * v).sum::<f64>()))
        }
    };
    let params = SolverParams { tol: a.solver_tol, max_sweeps: a.max_sweeps, ..Default::default() };
    let p = CapacityProblem::ball_in_ball(&g, &center, a.inner, a.outer, a.m, weight.clone(), params)?;
    let rep = capacity::cap_mu(&p)?;
    let mut summary = json!({ "report": rep });
    if a.m == 1 && weight.is_none() && g.dim() >= 3 {
        // Relative capacity for m = 1 is (n−1)!·(radial flux).
        summary["oracle"] = json!(factorial(g.dim() - 1) * capacity::ball_flux_oracle(g.dim(), a.inner, a.outer));
    }
    let mut b = Bundle::new();
    b.add_json("capacity.json", &summary);
    b.note(format!("cap={:?} sup_route={:?} route_gap={:.3e} sweeps={} converged={}", rep.cap, rep.sup_route, rep.route_gap, rep.sweeps, rep.converged));
    Ok(Outcome { bundle: b, pass: rep.converged })
}

fn verify(a: &VerifyArgs, ctx: &Ctx) -> Result<Outcome> {
    let ids: Vec<u32> = if !a.only.is_empty() {
        a.only.clone()
    } else {
        match a.suite {
            SuiteArg::Acceptance => acceptance::ALL.to_vec(),
            SuiteArg::Smoke => acceptance::SMOKE.to_vec(),
        }
    };
    let suite = acceptance::Suite::new(ctx.seed, ctx.tol_scale);
    let mut cs = vec![];
    for id in ids {
        let c = suite.run(id);
        println!("{}", c.line());
        cs.push(c);
    }
    let pass = cs.iter().all(|c| c.pass);
    let mut b = report::acceptance_bundle(&cs);
    b.note(format!("{}/{} passed", cs.iter().filter(|c| c.pass).count(), cs.len()));
    Ok(Outcome { bundle: b, pass })
}

fn dispatch(cli: &Cli) -> Result<bool> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global().context("thread pool")?;
    }
    if !(cli.tol_scale > 0.0 && cli.tol_scale.is_finite()) {
        bail!("--tol-scale must be positive");
    }
    let ctx = Ctx { seed: cli.seed, out: cli.out.clone(), tol_scale: cli.tol_scale };
    let outcome = match &cli.cmd {
        Cmd::Algebra(a) => algebra(a)?,
        Cmd::Field(a) => field(a)?,
        Cmd::Hessian(a) => hessian(a, &ctx)?,
        Cmd::Potential(a) => potential_cmd(a, &ctx)?,
        Cmd::Lelong(a) => lelong_cmd(a, &ctx)?,
        Cmd::Capacity(a) => match &a.problem {
            Some(path) => return run_manifest(path, Some("capacity"), cli),
            None => capacity_cmd(a)?,
        },
        Cmd::Verify(a) => verify(a, &ctx)?,
        Cmd::Run { config } => return run_manifest(config, None, cli),
    };
    outcome.bundle.write(&ctx.out).with_context(|| format!("cannot write reports to {}", ctx.out.display()))?;
    print!("{}", outcome.bundle.digest());
    Ok(outcome.pass)
}

/// Rebuilds an argument vector from a manifest and dispatches it.
fn run_manifest(path: &Path, forced_kind: Option<&str>, outer: &Cli) -> Result<bool> {
    let mut cfg = Config::load(path)?;
    cfg.resolve_files(path.parent().unwrap_or(Path::new(".")))?;
    let kind = match (forced_kind, cfg.get("kind")) {
        (Some(k), Some(e)) if e.value != k => bail!("line {}: kind `{}` in a {k} manifest", e.line, e.value),
        (Some(k), _) => k.to_string(),
        (None, Some(e)) => e.value.clone(),
        (None, None) => bail!("{}: missing `[task] kind`", path.display()),
    };
    if matches!(kind.as_str(), "run" | "verify") {
        bail!("line {}: kind `{kind}` cannot be nested", cfg.get("kind").map(|e| e.line).unwrap_or(0));
    }
    if cfg.get("seed").is_none() {
        bail!("{}: top-level `seed` is required", path.display());
    }
    let mut argv = vec!["shl".to_string()];
    argv.extend(cfg.global_args());
    if cfg.get("out").is_none() {
        argv.push("--out".into());
        argv.push(outer.out.to_string_lossy().into_owned());
    }
    if cfg.get("threads").is_none() && outer.threads > 0 {
        argv.extend(["--threads".into(), outer.threads.to_string()]);
    }
    argv.push(kind);
    argv.extend(cfg.task_args());
    let cli = Cli::try_parse_from(&argv).map_err(|e| {
        let msg = e.to_string();
        match cfg.blame(&msg) {
            Some(line) => anyhow!("{}: line {line}: {}", path.display(), msg.lines().next().unwrap_or("")),
            None => anyhow!("{}: {}", path.display(), msg.lines().next().unwrap_or("")),
        }
    })?;
    let cli = Cli { threads: if outer.threads > 0 { 0 } else { cli.threads }, ..cli };
    dispatch(&cli)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
