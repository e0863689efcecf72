//! Experiment registry. Each experiment turns a validated config into a JSON
//! payload, a list of verdicts, CSV series and optional matrix exports.

use bgkit::analysis::{
    analytic_killing_fields, check_nested, convergence_study, default_manufactured_field, invertibility_solve, killing_kernel,
    manufactured_convergence, operator_spectrum, regularity_constant, unique_continuation_test, RegularityOperator,
    SpectralOptions, StudyKind,
};
use bgkit::covering::{build_covering, build_partition, PatchOptions};
use bgkit::geometry::{geometry_check, Family, ManifoldAtlas};
use bgkit::operators::{assemble_by_name, symbol_sweep, DiffOperator, PotentialSpec};
use bgkit::sobolev::{build_patches, embedding_interpolation_check, norm_equivalence_report, Battery};
use bgkit::sparse::SparseMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, PotentialConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Indeterminate,
    Fail,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub rule: String,
    pub status: Status,
    pub detail: String,
}

impl Verdict {
    fn check(rule: impl Into<String>, ok: bool, detail: String) -> Self {
        Self { rule: rule.into(), status: if ok { Status::Pass } else { Status::Fail }, detail }
    }

    /// Pass when `determinate`, indeterminate otherwise.
    fn determinate(rule: impl Into<String>, determinate: bool, detail: String) -> Self {
        Self { rule: rule.into(), status: if determinate { Status::Pass } else { Status::Indeterminate }, detail }
    }
}

/// CSV table with a header row.
pub struct Series {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Series {
    fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.to_string(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn with_header(name: &str, header: Vec<String>) -> Self {
        Self { name: name.to_string(), header, rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

pub struct Outcome {
    pub payload: Value,
    pub verdicts: Vec<Verdict>,
    pub series: Vec<Series>,
    pub matrices: Vec<(String, SparseMatrix)>,
}

impl Outcome {
    fn new(payload: Value, verdicts: Vec<Verdict>, series: Vec<Series>) -> Self {
        Self { payload, verdicts, series, matrices: Vec::new() }
    }
}

pub struct Experiment {
    pub name: &'static str,
    pub description: &'static str,
    pub validate: fn(&ExperimentConfig) -> Result<(), String>,
    pub run: fn(&ExperimentConfig) -> bgkit::Result<Outcome>,
}

/// Alphabetized registry.
pub const EXPERIMENTS: [Experiment; 11] = [
    Experiment {
        name: "convergence",
        description: "convergence table and observed orders over nested resolutions",
        validate: validate_convergence,
        run: run_convergence,
    },
    Experiment {
        name: "cover-build",
        description: "greedy geodesic covering and its uniform partition of unity",
        validate: needs_covering,
        run: run_cover_build,
    },
    Experiment {
        name: "geometry-check",
        description: "metric compatibility, geodesic speed drift, curvature bounds, sphere holonomy",
        validate: no_requirements,
        run: run_geometry_check,
    },
    Experiment {
        name: "invertibility",
        description: "positivity and solve of L + V, zero-amplitude kernel, manufactured convergence",
        validate: needs_potential,
        run: run_invertibility,
    },
    Experiment {
        name: "killing",
        description: "numerical kernel of L against the closed-form Killing fields",
        validate: no_requirements,
        run: run_killing,
    },
    Experiment {
        name: "norm-equivalence",
        description: "patch-norm to covariant-norm ratio spread over a seeded battery",
        validate: needs_covering,
        run: run_norm_equivalence,
    },
    Experiment {
        name: "regularity",
        description: "quadratic-form regularity constant of an elliptic operator",
        validate: needs_elliptic_operator,
        run: run_regularity,
    },
    Experiment {
        name: "rk-check",
        description: "H1 interpolation inequality and its epsilon form over a seeded battery",
        validate: no_requirements,
        run: run_rk_check,
    },
    Experiment {
        name: "spectrum",
        description: "lowest eigenpairs of an assembled operator, with matrix export",
        validate: no_requirements,
        run: run_spectrum,
    },
    Experiment {
        name: "symbol-check",
        description: "principal symbol spectrum and ellipticity constant at seeded samples",
        validate: needs_elliptic_operator,
        run: run_symbol_check,
    },
    Experiment {
        name: "uc-test",
        description: "discrete unique continuation: L restricted to fields vanishing on a ball",
        validate: needs_ball,
        run: run_uc_test,
    },
];

pub fn find(name: &str) -> Option<&'static Experiment> {
    EXPERIMENTS.iter().find(|e| e.name == name)
}

/// Shortest round-trip decimal, switching to exponent form for tiny or huge values.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn options(cfg: &ExperimentConfig) -> SpectralOptions {
    SpectralOptions { seed: cfg.seed, ..SpectralOptions::default() }
}

fn atlas_at(cfg: &ExperimentConfig, res: usize) -> bgkit::Result<ManifoldAtlas> {
    cfg.manifold.spec(res).build()
}

fn operator_name(cfg: &ExperimentConfig) -> &str {
    cfg.operator.as_ref().map_or("deformation_laplacian", |o| o.name.as_str())
}

fn potential(cfg: &ExperimentConfig) -> &PotentialConfig {
    cfg.operator.as_ref().and_then(|o| o.potential.as_ref()).expect("validated")
}

fn relative_change(a: f64, b: f64) -> f64 {
    ((b - a) / a).abs()
}

fn no_requirements(_: &ExperimentConfig) -> Result<(), String> {
    Ok(())
}

fn needs_covering(cfg: &ExperimentConfig) -> Result<(), String> {
    match cfg.covering {
        Some(_) => Ok(()),
        None => Err(format!("experiment {} needs a [covering] section", cfg.experiment)),
    }
}

fn needs_ball(cfg: &ExperimentConfig) -> Result<(), String> {
    match cfg.operator.as_ref().and_then(|o| o.potential.as_ref()) {
        Some(_) => Ok(()),
        None => Err(format!("experiment {} needs an [operator.potential] section with center and radius", cfg.experiment)),
    }
}

fn needs_potential(cfg: &ExperimentConfig) -> Result<(), String> {
    needs_ball(cfg)
}

fn needs_elliptic_operator(cfg: &ExperimentConfig) -> Result<(), String> {
    if operator_name(cfg) == "identity" {
        return Err(format!("experiment {} needs a second-order operator, not identity", cfg.experiment));
    }
    Ok(())
}

fn validate_convergence(cfg: &ExperimentConfig) -> Result<(), String> {
    if cfg.operator.as_ref().and_then(|o| o.study.as_ref()).is_none() {
        return Err("experiment convergence needs operator.study".into());
    }
    check_nested(&cfg.manifold.resolutions).map_err(|e| e.to_string())
}

fn run_cover_build(cfg: &ExperimentConfig) -> bgkit::Result<Outcome> {
    let cov_cfg = cfg.covering.as_ref().expect("validated");
    let atlas = atlas_at(cfg, cfg.manifold.resolutions[0])?;
    let covering = build_covering(&atlas, cov_cfg.radius)?;
    let partition = build_partition(&atlas, &covering, cov_cfg.template)?;
    let n = atlas.dim();

    let mut header = vec!["center".to_string(), "chart".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.push("node".into());
    let mut centers = Series::with_header("centers", header);
    for (k, (c, node)) in covering.centers.iter().zip(&covering.center_nodes).enumerate() {
        let mut row = vec![k.to_string(), c.chart.to_string()];
        row.extend(c.x.iter().map(|&v| num(v)));
        row.push(node.to_string());
        centers.push(row);
    }
    let mut multiplicity = Series::new("multiplicity", &["radius", "count"]);
    for m in &covering.multiplicity_table {
        multiplicity.push(vec![num(m.radius), m.count.to_string()]);
    }
    let mut bounds = Series::new("partition_bounds", &["center", "w0_inf", "w1_inf", "w2_inf"]);
    for (k, b) in partition.center_bounds.iter().enumerate() {
        bounds.push(vec![k.to_string(), num(b[0]), num(b[1]), num(b[2])]);
    }

    let verdicts = vec![
        Verdict::check("partition_sum", partition.sum_defect <= 1e-12, format!("max |sum phi - 1| = {:e} (tol 1e-12)", partition.sum_defect)),
        Verdict::check(
            "support_containment",
            partition.support_violations == 0,
            format!("{} nodes with phi > 0 outside B_r", partition.support_violations),
        ),
        Verdict::check(
            "bounds_finite",
            partition.uniform_bounds.iter().all(|b| b.is_finite()),
            format!("sup W^{{rho,inf}} bounds {:?}", partition.uniform_bounds),
        ),
        Verdict::check(
            "coverage",
            covering.coverage_distance <= cov_cfg.radius,
            format!("largest distance to a center {} (r = {})", covering.coverage_distance, cov_cfg.radius),
        ),
    ];
    let payload = json!({ "covering": covering, "partition": partition });
    Ok(Outcome::new(payload, verdicts, vec![centers, multiplicity, bounds]))
}

fn run_geometry_check(cfg: &ExperimentConfig) -> bgkit::Result<Outcome> {
    let mut runs = Vec::new();
    let mut verdicts = Vec::new();
    let mut table = Series::new("geometry", &["resolution", "quantity", "value", "tolerance"]);
    for &res in &cfg.manifold.resolutions {
        let atlas = atlas_at(cfg, res)?;
        let check = geometry_check(&atlas)?;
        let mut quantities = vec![("metric_compatibility", check.metric_compatibility, 1e-10), ("speed_drift", check.speed_drift, 1e-8)];
        if let Some(s) = &check.sphere {
            quantities.push(("great_circle_return", s.great_circle_return, 1e-6));
            quantities.push(("holonomy_error", s.holonomy_error, 1e-4));
        }
        for (name, value, tol) in quantities {
            verdicts.push(Verdict::check(format!("{name}@{res}"), value < tol, format!("{value:e} (tol {tol:e})")));
            table.push(vec![res.to_string(), name.into(), num(value), num(tol)]);
        }
        for (name, value) in [
            ("sup_riemann", check.curvature.sup_riemann),
            ("sup_nabla_riemann", check.curvature.sup_derivatives.first().copied().unwrap_or(0.0)),
            ("min_sectional", check.curvature.min_sectional),
            ("max_sectional", check.curvature.max_sectional),
        ] {
            table.push(vec![res.to_string(), name.into(), num(value), String::new()]);
        }
        runs.push(json!({ "resolution": res, "check": check }));
    }
    Ok(Outcome::new(json!({ "runs": runs }), verdicts, vec![table]))
}

fn run_norm_equivalence(cfg: &ExperimentConfig) -> bgkit::Result<Outcome> {
    let cov_cfg = cfg.covering.as_ref().expect("validated");
    let sob = &cfg.sobolev;
    let mut ratios = Series::new("ratios", &["resolution", "s", "field", "ratio"]);
    let mut spreads = Series::new("spreads", &["resolution", "s", "c1", "c2", "spread"]);
    let mut verdicts = Vec::new();
    let mut runs = Vec::new();
    let mut previous: Vec<(usize, f64)> = Vec::new();
    for &res in &cfg.manifold.resolutions {
        let atlas = atlas_at(cfg, res)?;
        let covering = build_covering(&atlas, cov_cfg.radius)?;
        let partition = build_partition(&atlas, &covering, cov_cfg.template)?;
        let patches = build_patches(&atlas, &covering, PatchOptions::matching(&atlas, cov_cfg.radius))?;
        let battery = Battery::for_atlas(&atlas, cfg.seed, sob.fields, sob.cap);
        let mut reports = Vec::new();
        let mut current = Vec::new();
        for &s in &sob.orders {
            let report = norm_equivalence_report(&atlas, &battery, s, sob.p, &partition, &patches)?;
            for (i, r) in report.ratios.iter().enumerate() {
                ratios.push(vec![res.to_string(), s.to_string(), i.to_string(), num(*r)]);
            }
            spreads.push(vec![res.to_string(), s.to_string(), num(report.c1), num(report.c2), num(report.spread)]);
            let finite = report.spread.is_finite() && report.c1 > 0.0;
            verdicts.push(Verdict::check(format!("spread_finite@{res}/s={s}"), finite, format!("c2/c1 = {}", report.spread)));
            if let Some(&(_, before)) = previous.iter().find(|(ps, _)| *ps == s) {
                let change = relative_change(before, report.spread);
                verdicts.push(Verdict::check(
                    format!("spread_stable@{res}/s={s}"),
                    change < 0.5,
                    format!("relative change {change:.4} under refinement (tol 0.5)"),
                ));
            }
            current.push((s, report.spread));
            reports.push(report);
        }
        previous = current;
        runs.push(json!({ "resolution": res, "centers": covering.len(), "reports": reports }));
    }
    Ok(Outcome::new(json!({ "runs": runs }), verdicts, vec![ratios, spreads]))
}

fn run_rk_check(cfg: &ExperimentConfig) -> bgkit::Result<Outcome> {
    let sob = &cfg.sobolev;
    let mut table = Series::new("epsilon", &["resolution", "epsilon", "c_epsilon", "violations", "min_margin"]);
    let mut verdicts = Vec::new();
    let mut runs = Vec::new();
    for &res in &cfg.manifold.resolutions {
        let atlas = atlas_at(cfg, res)?;
        let fields = Battery::for_atlas(&atlas, cfg.seed, sob.fields, sob.cap).fields(&atlas)?;
        let report = embedding_interpolation_check(&atlas, &fields, &sob.epsilons)?;
        for c in &report.checks {
            table.push(vec![res.to_string(), num(c.epsilon), num(c.c_epsilon), c.violations.to_string(), num(c.min_margin)]);
            verdicts.push(Verdict::check(
                format!("epsilon_inequality@{res}/eps={}", c.epsilon),
                c.violations == 0,
                format!("{} violations over {} fields, C_eps = {}", c.violations, report.fields, c.c_epsilon),
            ));
        }
        runs.push(json!({ "resolution": res, "report": report }));
    }
    Ok(Outcome::new(json!({ "runs": runs }), verdicts, vec![table]))
}

/// Eigenvalues of `σ(η)/|η|²` for the builtin second-order operators.
fn expected_symbol(name: &str, n: usize) -> Option<Vec<f64>> {
    match name {
        "scalar_laplacian" => Some(vec![1.0]),
        "bochner" => Some(vec![1.0; n]),
        "deformation_laplacian" => {
            let mut v = vec![1.0; n];
            v[n - 1] = 2.0;
            Some(v)
        }
        _ => None,
    }
}

fn run_symbol_check(cfg: &ExperimentConfig) -> bgkit::Result<Outcome> {
    let name = operator_name(cfg);
    let samples = cfg.operator.as_ref().map_or(100, |o| o.samples);
    let atlas = atlas_at(cfg, cfg.manifold.resolutions[0])?;
    let n = atlas.dim();
    let op = DiffOperator::by_name(&atlas, name)?;
    let sweep = symbol_sweep(&op, &atlas, samples, cfg.seed)?;
    let expected = expected_symbol(name, n).expect("validated");
    let deviation = sweep
        .eigenvalues
        .iter()
        .flat_map(|ev| ev.iter().zip(&expected).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);

    let mut header = vec!["sample".to_string(), "chart".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..n).map(|i| format!("eta{i}")));
    header.extend((0..expected.len()).map(|i| format!("ev{i}")));
    let mut table = Series::with_header("symbol", header);
    for (k, ((p, eta), ev)) in sweep.points.iter().zip(&sweep.covectors).zip(&sweep.eigenvalues).enumerate() {
        let mut row = vec![k.to_string(), p.chart.to_string()];
        row.extend(p.x.iter().chain(eta).chain(ev).map(|&v| num(v)));
        table.push(row);
    }
    let verdicts = vec![
        Verdict::check(
            "symbol_spectrum",
            deviation <= 1e-10,
            format!("max deviation from {expected:?} is {deviation:e} over {samples} samples (tol 1e-10)"),
        ),
        Verdict::check("ellipticity_constant", (sweep.gamma - 1.0).abs() <= 1e-10, format!("gamma = {} (expected 1, tol 1e-10)", sweep.gamma)),
    ];
    let payload = json!({ "sweep": sweep, "expected": expected, "max_deviation": deviation });
    Ok(Outcome::new(payload, verdicts, vec![table]))
}

fn run_spectrum(cfg: &ExperimentConfig) -> bgkit::Result<Outcome> {
    let name = operator_name(cfg);
    let count = cfg.operator.as_ref().map_or(6, |o| o.count);
    let atlas = atlas_at(cfg, cfg.manifold.resolutions[0])?;
    let op = assemble_by_name(&atlas, name)?;
    let report = operator_spectrum(&op, count, options(cfg))?;
    let kernel = report.default_kernel();
    let mut table = Series::new("eigenvalues", &["index", "eigenvalue", "residual"]);
    for (i, (l, r)) in report.eigenvalues.iter().zip(&report.residuals).enumerate() {
        table.push(vec![i.to_string(), num(*l), num(*r)]);
    }
    let worst_residual = report
        .eigenvalues
        .iter()
        .zip(&report.residuals)
        .map(|(l, r)| r / l.abs().max(1.0))
        .fold(0.0, f64::max);
    let lowest = report.eigenvalues.first().copied().unwrap_or(0.0);
    let verdicts = vec![
        Verdict::check("symmetric", op.symmetry_defect <= 1e-10, format!("symmetry defect {:e}", op.symmetry_defect)),
        Verdict::check("residuals", worst_residual <= 1e-6, format!("max relative residual {worst_residual:e} (tol 1e-6)")),
        Verdict::check(
            "semidefinite",
            lowest >= -1e-10 * report.lambda_max,
            format!("lowest eigenvalue {lowest:e}, lambda_max {:e}", report.lambda_max),
        ),
        Verdict::determinate(
            "kernel",
            kernel.determinate,
            format!("dimension {} (threshold {:e}, gap ratio {:e})", kernel.dimension, kernel.threshold, kernel.gap_ratio),
        ),
    ];
    let payload = json!({ "spectrum": report, "kernel": kernel, "symmetry_defect": op.symmetry_defect });
    let mut outcome = Outcome::new(payload, verdicts, vec![table]);
    outcome.matrices = vec![("stiffness".into(), op.stiffness.clone()), ("mass".into(), op.mass.clone())];
    Ok(outcome)
}

fn run_killing(cfg: &ExperimentConfig) -> bgkit::Result<Outcome> {
    let mut spectrum = Series::new("killing_spectrum", &["resolution", "index", "eigenvalue", "residual"]);
    let mut angles = Series::new("principal_angles", &["resolution", "index", "angle"]);
    let mut verdicts = Vec::new();
    let mut runs = Vec::new();
    let mut dims = Vec::new();
    for &res in &cfg.manifold.resolutions {
        let atlas = atlas_at(cfg, res)?;
        let report = killing_kernel(&atlas, options(cfg))?;
        for (i, (l, r)) in report.eigenvalues.iter().zip(&report.residuals).enumerate() {
            spectrum.push(vec![res.to_string(), i.to_string(), num(*l), num(*r)]);
        }
        for (i, a) in report.principal_angles.iter().enumerate() {
            angles.push(vec![res.to_string(), i.to_string(), num(*a)]);
        }
        let v = &report.verdict;
        verdicts.push(Verdict::determinate(format!("kernel_determinate@{res}"), v.determinate, format!("dimension {}", v.dimension)));
        verdicts.push(Verdict::check(format!("gap_ratio@{res}"), v.gap_ratio > 1e3, format!("{:e} (tol 1e3)", v.gap_ratio)));
        verdicts.push(Verdict::check(
            format!("matches_analytic@{res}"),
            report.matches_analytic,
            format!(
                "numerical dimension {}, analytic {}, max principal angle {:e} (tol 1e-4)",
                report.dimension,
                report.analytic_dimension,
                report.principal_angles.iter().copied().fold(0.0, f64::max)
            ),
        ));
        dims.push(report.dimension);
        runs.push(json!({ "resolution": res, "report": report }));
    }
    if dims.len() > 1 {
        verdicts.push(Verdict::check("dimension_stable", dims.windows(2).all(|w| w[0] == w[1]), format!("dimensions {dims:?}")));
    }
    Ok(Outcome::new(json!({ "runs": runs }), verdicts, vec![spectrum, angles]))
}

fn run_uc_test(cfg: &ExperimentConfig) -> bgkit::Result<Outcome> {
    let ball = potential(cfg);
    let mut table = Series::new("uc", &["resolution", "lambda_min", "residual", "removed_nodes", "restricted_size", "volume_fraction"]);
    let mut fractions = Series::new("mass_fractions", &["resolution", "field", "fraction", "lower_bound"]);
    let mut verdicts = Vec::new();
    let mut runs = Vec::new();
    let mut lambdas: Vec<(usize, f64)> = Vec::new();
    for &res in &cfg.manifold.resolutions {
        let atlas = atlas_at(cfg, res)?;
        let report = unique_continuation_test(&atlas, &ball.center, ball.radius, options(cfg))?;
        table.push(vec![
            res.to_string(),
            num(report.lambda_min),
            num(report.residual),
            report.removed_nodes.to_string(),
            report.restricted_size.to_string(),
            num(report.volume_fraction),
        ]);
        verdicts.push(Verdict::check(format!("lambda_min_positive@{res}"), report.positive, format!("lambda_min = {:e}", report.lambda_min)));
        for m in &report.mass_fractions {
            fractions.push(vec![res.to_string(), m.field.to_string(), num(m.fraction), num(m.lower_bound)]);
            verdicts.push(Verdict::check(
                format!("mass_fraction@{res}/field={}", m.field),
                m.fraction >= m.lower_bound,
                format!("fraction {} vs lower bound {}", m.fraction, m.lower_bound),
            ));
        }
        if let Some(&(prev_res, prev)) = lambdas.last() {
            let change = relative_change(prev, report.lambda_min);
            verdicts.push(Verdict::check(
                format!("lambda_min_stable@{prev_res}->{res}"),
                change < 0.1,
                format!("relative change {change:.4} (tol 0.1)"),
            ));
        }
        lambdas.push((res, report.lambda_min));
        runs.push(json!({ "resolution": res, "report": report }));
    }
    Ok(Outcome::new(json!({ "runs": runs }), verdicts, vec![table, fractions]))
}

fn run_invertibility(cfg: &ExperimentConfig) -> bgkit::Result<Outcome> {
    let p = potential(cfg);
    let spec = PotentialSpec { center: p.center.clone(), radius: p.radius, amplitude: p.amplitude };
    let zero = PotentialSpec { amplitude: 0.0, ..spec.clone() };
    let mut solves = Series::new("solves", &["resolution", "amplitude", "lambda_min", "lambda_max", "condition", "kernel_dimension", "residual"]);
    let mut verdicts = Vec::new();
    let mut runs = Vec::new();
    let push = |table: &mut Series, res: usize, r: &bgkit::analysis::SolveReport| {
        table.push(vec![
            res.to_string(),
            num(r.amplitude),
            num(r.lambda_min),
            num(r.lambda_max),
            num(r.condition_estimate),
            r.kernel.dimension.to_string(),
            opt(r.residual),
        ])
    };
    let finest = *cfg.manifold.resolutions.last().expect("nonempty");
    for &res in &cfg.manifold.resolutions {
        let atlas = atlas_at(cfg, res)?;
        let rhs = default_manufactured_field(&atlas)?.sample(&atlas);
        let report = invertibility_solve(&atlas, &spec, &rhs, options(cfg))?;
        push(&mut solves, res, &report);
        if p.amplitude > 0.0 {
            verdicts.push(Verdict::check(
                format!("invertible@{res}"),
                report.invertible,
                format!("lambda_min = {:e}, kernel dimension {}", report.lambda_min, report.kernel.dimension),
            ));
        }
        let mut run = json!({ "resolution": res, "solve": report });
        if res == finest {
            let killing = analytic_killing_fields(&atlas)?.len();
            let unpotentialed = invertibility_solve(&atlas, &zero, &rhs, options(cfg))?;
            push(&mut solves, res, &unpotentialed);
            let k = &unpotentialed.kernel;
            verdicts.push(if k.determinate {
                Verdict::check(
                    format!("zero_amplitude_kernel@{res}"),
                    k.dimension == killing,
                    format!("kernel dimension {} vs Killing dimension {killing}", k.dimension),
                )
            } else {
                Verdict::determinate(format!("zero_amplitude_kernel@{res}"), false, format!("no clear spectral gap (ratio {:e})", k.gap_ratio))
            });
            run["zero_amplitude"] = json!(unpotentialed);
            run["killing_dimension"] = json!(killing);
        }
        runs.push(run);
    }
    let mut series = vec![solves];
    let mut payload = json!({ "runs": runs });
    if check_nested(&cfg.manifold.resolutions).is_ok() && p.amplitude > 0.0 {
        let base = cfg.manifold.spec(cfg.manifold.resolutions[0]);
        let study = manufactured_convergence(&base, &cfg.manifold.resolutions, &spec, default_manufactured_field, options(cfg))?;
        let mut table = Series::new("manufactured", &["resolution", "h", "error", "order"]);
        for row in &study.table {
            table.push(vec![row.resolution.to_string(), num(row.h), opt(row.error), opt(row.order)]);
        }
        verdicts.push(Verdict::check("manufactured_order", study.min_order >= 3.5, format!("minimum observed order {:.3} (tol 3.5)", study.min_order)));
        payload["manufactured"] = json!({ "table": study.table, "min_order": study.min_order });
        series.push(table);
    }
    Ok(Outcome::new(payload, verdicts, series))
}

fn run_regularity(cfg: &ExperimentConfig) -> bgkit::Result<Outcome> {
    let name = operator_name(cfg);
    let operator = match name {
        "scalar_laplacian" => RegularityOperator::ScalarLaplacian,
        "bochner" => RegularityOperator::Bochner,
        "deformation_laplacian" => RegularityOperator::DeformationLaplacian,
        _ => RegularityOperator::Identity,
    };
    let oracle = (name == "scalar_laplacian" && cfg.manifold.family == Family::FlatTorus).then_some(1.5);
    let mut table = Series::new("regularity", &["resolution", "c00_squared", "c00", "residual"]);
    let mut verdicts = Vec::new();
    let mut reports = Vec::new();
    let mut previous: Option<(usize, f64)> = None;
    for &res in &cfg.manifold.resolutions {
        let atlas = atlas_at(cfg, res)?;
        let r = regularity_constant(&atlas, operator, options(cfg))?;
        table.push(vec![res.to_string(), num(r.c00_squared), num(r.c00), num(r.residual)]);
        verdicts.push(Verdict::check(format!("finite@{res}"), r.c00_squared.is_finite() && r.c00_squared > 0.0, format!("c00^2 = {}", r.c00_squared)));
        if let Some(exact) = oracle {
            let err = (r.c00_squared - exact).abs();
            verdicts.push(Verdict::check(format!("fourier_value@{res}"), err <= 1e-6, format!("c00^2 = {}, exact 3/2, error {err:e} (tol 1e-6)", r.c00_squared)));
        }
        if let Some((prev_res, prev)) = previous {
            let growth = r.c00_squared / prev - 1.0;
            verdicts.push(Verdict::check(format!("growth@{prev_res}->{res}"), growth < 0.1, format!("relative growth {growth:.3e} (tol 0.1)")));
        }
        previous = Some((res, r.c00_squared));
        reports.push(r);
    }
    Ok(Outcome::new(json!({ "reports": reports, "oracle": oracle }), verdicts, vec![table]))
}

fn run_convergence(cfg: &ExperimentConfig) -> bgkit::Result<Outcome> {
    let study_name = cfg.operator.as_ref().and_then(|o| o.study.clone()).expect("validated");
    let kind = match study_name.as_str() {
        "laplacian_eigenvalue" => StudyKind::LaplacianEigenvalue,
        "killing_dimension" => StudyKind::KillingDimension,
        _ => StudyKind::ManufacturedSolve,
    };
    let base = cfg.manifold.spec(cfg.manifold.resolutions[0]);
    let study = convergence_study(kind, &base, &cfg.manifold.resolutions, options(cfg))?;
    let mut table = Series::new("convergence", &["resolution", "h", "value", "error", "order"]);
    for row in &study.table {
        table.push(vec![row.resolution.to_string(), num(row.h), num(row.value), opt(row.error), opt(row.order)]);
    }
    let verdict = match kind {
        StudyKind::KillingDimension => {
            let values: Vec<f64> = study.table.iter().map(|r| r.value).collect();
            Verdict::check("dimension_stable", values.windows(2).all(|w| w[0] == w[1]), format!("dimensions {values:?}"))
        }
        _ => match study.table.last().and_then(|r| r.order) {
            Some(order) => Verdict::check("observed_order", order >= 3.5, format!("finest observed order {order:.3} (tol 3.5)")),
            None => Verdict::determinate("observed_order", false, "no order could be computed".into()),
        },
    };
    Ok(Outcome::new(json!({ "study": study }), vec![verdict], vec![table]))
}
