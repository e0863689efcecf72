//! Experiment configuration: a TOML file with `[manifold]`, `[covering]`,
//! `[operator]`, `[operator.potential]` and `[sobolev]` sections.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use bgkit::covering::BumpTemplate;
use bgkit::geometry::{AtlasSpec, ChartPoint, Family};
use bgkit::operators::OPERATOR_NAMES;
use serde::Serialize;
use toml_edit::{Document, Item, Table, Value};

use crate::experiments::EXPERIMENTS;

/// Parse or validation failure tied to a line of the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Serialize)]
pub struct ManifoldConfig {
    pub family: Family,
    pub params: BTreeMap<String, f64>,
    pub resolutions: Vec<usize>,
}

impl ManifoldConfig {
    pub fn spec(&self, resolution: usize) -> AtlasSpec {
        AtlasSpec::new(self.family, self.params.clone(), vec![resolution])
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoveringConfig {
    pub radius: f64,
    pub template: BumpTemplate,
}

#[derive(Clone, Debug, Serialize)]
pub struct PotentialConfig {
    pub center: ChartPoint,
    pub radius: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OperatorConfig {
    pub name: String,
    /// Eigenpairs requested by `spectrum`.
    pub count: usize,
    /// Random `(x, η)` samples for `symbol-check`.
    pub samples: usize,
    /// Quantity tracked by `convergence`.
    pub study: Option<String>,
    pub potential: Option<PotentialConfig>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SobolevConfig {
    pub fields: usize,
    pub cap: usize,
    pub orders: Vec<usize>,
    pub p: f64,
    pub epsilons: Vec<f64>,
}

impl Default for SobolevConfig {
    fn default() -> Self {
        Self { fields: 50, cap: 3, orders: vec![0, 1, 2], p: 2.0, epsilons: vec![0.5, 0.1] }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub output_dir: String,
    pub manifold: ManifoldConfig,
    pub covering: Option<CoveringConfig>,
    pub operator: Option<OperatorConfig>,
    pub sobolev: SobolevConfig,
}

/// Byte offsets to 1-based line numbers.
struct Lines<'a> {
    source: &'a str,
}

impl Lines<'_> {
    fn of(&self, span: Option<Range<usize>>) -> usize {
        span.map_or(1, |s| self.source[..s.start.min(self.source.len())].matches('\n').count() + 1)
    }
}

struct Section<'a> {
    name: String,
    table: &'a Table,
    lines: &'a Lines<'a>,
}

impl<'a> Section<'a> {
    fn err(&self, span: Option<Range<usize>>, message: impl Into<String>) -> ConfigError {
        ConfigError { line: self.lines.of(span), message: message.into() }
    }

    fn header_line(&self) -> usize {
        self.lines.of(self.table.span())
    }

    fn value(&self, key: &str) -> Option<(&'a Value, Option<Range<usize>>)> {
        let (k, item) = self.table.get_key_value(key)?;
        let span = k.span().or_else(|| item.span());
        item.as_value().map(|v| (v, span))
    }

    fn wrong_type(&self, key: &str, span: Option<Range<usize>>, want: &str) -> ConfigError {
        self.err(span, format!("{}{key} must be {want}", self.prefix()))
    }

    fn prefix(&self) -> String {
        if self.name.is_empty() { String::new() } else { format!("{}.", self.name) }
    }

    fn missing(&self, key: &str) -> ConfigError {
        ConfigError { line: self.header_line(), message: format!("missing required key {}{key}", self.prefix()) }
    }

    fn str(&self, key: &str) -> Result<Option<(String, usize)>, ConfigError> {
        match self.value(key) {
            None => Ok(None),
            Some((v, span)) => v
                .as_str()
                .map(|s| Some((s.to_string(), self.lines.of(span.clone()))))
                .ok_or_else(|| self.wrong_type(key, span, "a string")),
        }
    }

    fn float(&self, key: &str) -> Result<Option<(f64, usize)>, ConfigError> {
        match self.value(key) {
            None => Ok(None),
            Some((v, span)) => v
                .as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .map(|x| Some((x, self.lines.of(span.clone()))))
                .ok_or_else(|| self.wrong_type(key, span, "a number")),
        }
    }

    fn uint(&self, key: &str) -> Result<Option<(usize, usize)>, ConfigError> {
        match self.value(key) {
            None => Ok(None),
            Some((v, span)) => match v.as_integer() {
                Some(i) if i >= 0 => Ok(Some((i as usize, self.lines.of(span)))),
                _ => Err(self.wrong_type(key, span, "a nonnegative integer")),
            },
        }
    }

    fn floats(&self, key: &str) -> Result<Option<(Vec<f64>, usize)>, ConfigError> {
        match self.value(key) {
            None => Ok(None),
            Some((v, span)) => {
                let arr = v.as_array().ok_or_else(|| self.wrong_type(key, span.clone(), "an array of numbers"))?;
                let vals: Option<Vec<f64>> = arr.iter().map(|x| x.as_float().or_else(|| x.as_integer().map(|i| i as f64))).collect();
                vals.map(|v| Some((v, self.lines.of(span.clone())))).ok_or_else(|| self.wrong_type(key, span, "an array of numbers"))
            }
        }
    }

    fn uints(&self, key: &str) -> Result<Option<(Vec<usize>, usize)>, ConfigError> {
        match self.value(key) {
            None => Ok(None),
            Some((v, span)) => {
                let arr = v.as_array().ok_or_else(|| self.wrong_type(key, span.clone(), "an array of integers"))?;
                let vals: Option<Vec<usize>> =
                    arr.iter().map(|x| x.as_integer().filter(|&i| i >= 0).map(|i| i as usize)).collect();
                vals.map(|v| Some((v, self.lines.of(span.clone())))).ok_or_else(|| self.wrong_type(key, span, "an array of nonnegative integers"))
            }
        }
    }

    fn check_keys(&self, allowed: &[&str], subtables: &[&str]) -> Result<(), ConfigError> {
        for (key, item) in self.table.iter() {
            let span = self.table.key(key).and_then(|k| k.span()).or_else(|| item.span());
            if item.is_table() || item.is_array_of_tables() {
                if !subtables.contains(&key) {
                    return Err(self.err(span, format!("unknown section [{}{key}]", self.prefix())));
                }
            } else if !allowed.contains(&key) {
                return Err(self.err(span, format!("unknown key {}{key}", self.prefix())));
            }
        }
        Ok(())
    }

    fn sub(&self, key: &str) -> Result<Option<Section<'a>>, ConfigError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Item::Table(t)) => Ok(Some(Section { name: format!("{}{key}", self.prefix()), table: t, lines: self.lines })),
            Some(item) => Err(self.err(item.span(), format!("{}{key} must be a section", self.prefix()))),
        }
    }
}

const MANIFOLD_KEYS: [&str; 3] = ["family", "resolution", "resolutions"];

fn parse_manifold(s: &Section) -> Result<ManifoldConfig, ConfigError> {
    let (family_name, family_line) = s.str("family")?.ok_or_else(|| s.missing("family"))?;
    let family: Family = family_name.parse().map_err(|e: bgkit::Error| ConfigError { line: family_line, message: e.to_string() })?;
    let (resolutions, res_line) = match (s.uint("resolution")?, s.uints("resolutions")?) {
        (Some(_), Some((_, line))) => {
            return Err(ConfigError { line, message: "give either manifold.resolution or manifold.resolutions, not both".into() })
        }
        (Some((r, line)), None) => (vec![r], line),
        (None, Some(rs)) => rs,
        (None, None) => return Err(s.missing("resolution")),
    };
    if resolutions.is_empty() || resolutions.iter().any(|&r| r < 4) {
        return Err(ConfigError { line: res_line, message: "resolutions must be integers >= 4".into() });
    }
    let base = resolutions[0];
    for &r in &resolutions[1..] {
        let ratio = r / base;
        if r % base != 0 || !ratio.is_power_of_two() || ratio < 2 {
            return Err(ConfigError { line: res_line, message: format!("resolution {r} is not a power-of-two multiple (>= 2) of the base {base}") });
        }
    }
    if resolutions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ConfigError { line: res_line, message: "resolutions must be strictly increasing".into() });
    }
    let mut params = BTreeMap::new();
    let mut first_param_line = family_line;
    for (key, _) in s.table.iter() {
        if MANIFOLD_KEYS.contains(&key) {
            continue;
        }
        let (v, line) = s.float(key)?.expect("key exists");
        let known = family.defaults().iter().any(|(k, _)| *k == key)
            || (family == Family::FlatTorus && key.strip_prefix('L').is_some_and(|d| d.parse::<usize>().is_ok_and(|i| i >= 1)));
        if !known {
            return Err(ConfigError { line, message: format!("unknown parameter '{key}' for {family}") });
        }
        if params.is_empty() {
            first_param_line = line;
        }
        params.insert(key.to_string(), v);
    }
    AtlasSpec::new(family, params.clone(), vec![base])
        .build()
        .map_err(|e| ConfigError { line: first_param_line, message: e.to_string() })?;
    // echo the defaults too, so the report records the full manifold
    for (k, v) in family.defaults() {
        params.entry(k.to_string()).or_insert(v);
    }
    if family == Family::FlatTorus && params.is_empty() {
        params.insert("L1".into(), std::f64::consts::TAU);
        params.insert("L2".into(), std::f64::consts::TAU);
    }
    Ok(ManifoldConfig { family, params, resolutions })
}

pub fn parse(source: &str) -> Result<ExperimentConfig, ConfigError> {
    let doc = Document::parse(source.to_string()).map_err(|e| {
        let line = e.span().map_or(1, |s| source[..s.start.min(source.len())].matches('\n').count() + 1);
        ConfigError { line, message: format!("TOML syntax error: {}", e.message()) }
    })?;
    let lines = Lines { source };
    let root = Section { name: String::new(), table: doc.as_table(), lines: &lines };
    root.check_keys(&["experiment", "seed", "output_dir"], &["manifold", "covering", "operator", "sobolev"])?;

    let (experiment, exp_line) = root.str("experiment")?.ok_or_else(|| ConfigError { line: 1, message: "missing required key experiment".into() })?;
    let Some(entry) = EXPERIMENTS.iter().find(|e| e.name == experiment) else {
        let names: Vec<&str> = EXPERIMENTS.iter().map(|e| e.name).collect();
        return Err(ConfigError { line: exp_line, message: format!("unknown experiment '{experiment}' (run `bgkit list`; known: {})", names.join(", ")) });
    };
    let seed = root.uint("seed")?.map_or(0, |(s, _)| s as u64);
    let output_dir = root.str("output_dir")?.map_or_else(|| format!("bgkit-out/{experiment}"), |(s, _)| s);

    let manifold_section = root.sub("manifold")?.ok_or_else(|| ConfigError { line: exp_line, message: "missing required section [manifold]".into() })?;
    let manifold = parse_manifold(&manifold_section)?;

    let covering = match root.sub("covering")? {
        None => None,
        Some(s) => {
            s.check_keys(&["radius", "template"], &[])?;
            let (radius, line) = s.float("radius")?.ok_or_else(|| s.missing("radius"))?;
            let template = match s.str("template")? {
                None => BumpTemplate::Quintic,
                Some((t, tl)) => match t.as_str() {
                    "quintic" => BumpTemplate::Quintic,
                    "exponential" => BumpTemplate::Exponential,
                    other => return Err(ConfigError { line: tl, message: format!("unknown bump template '{other}' (quintic, exponential)") }),
                },
            };
            let atlas = manifold.spec(manifold.resolutions[0]).build().map_err(|e| ConfigError { line, message: e.to_string() })?;
            bgkit::covering::check_radius(&atlas, radius).map_err(|e| ConfigError { line, message: e.to_string() })?;
            Some(CoveringConfig { radius, template })
        }
    };

    let operator = match root.sub("operator")? {
        None => None,
        Some(s) => {
            s.check_keys(&["name", "count", "samples", "study"], &["potential"])?;
            let name = match s.str("name")? {
                None => "deformation_laplacian".to_string(),
                Some((n, nl)) => {
                    if !OPERATOR_NAMES.contains(&n.as_str()) {
                        return Err(ConfigError { line: nl, message: format!("unknown operator '{n}' (expected one of {})", OPERATOR_NAMES.join(", ")) });
                    }
                    n
                }
            };
            let count = s.uint("count")?.map_or(6, |(c, _)| c);
            let samples = s.uint("samples")?.map_or(100, |(c, _)| c);
            if count == 0 || samples == 0 {
                return Err(ConfigError { line: s.header_line(), message: "operator.count and operator.samples must be positive".into() });
            }
            let study = match s.str("study")? {
                None => None,
                Some((st, sl)) => {
                    if !STUDIES.contains(&st.as_str()) {
                        return Err(ConfigError { line: sl, message: format!("unknown study '{st}' (expected one of {})", STUDIES.join(", ")) });
                    }
                    Some(st)
                }
            };
            let potential = match s.sub("potential")? {
                None => None,
                Some(p) => {
                    p.check_keys(&["center", "chart", "radius", "amplitude"], &[])?;
                    let (center, cl) = p.floats("center")?.ok_or_else(|| p.missing("center"))?;
                    let chart = p.uint("chart")?.map_or(0, |(c, _)| c);
                    let (radius, rl) = p.float("radius")?.ok_or_else(|| p.missing("radius"))?;
                    if !(radius > 0.0) {
                        return Err(ConfigError { line: rl, message: "operator.potential.radius must be positive".into() });
                    }
                    let amplitude = match p.float("amplitude")? {
                        None => 1.0,
                        Some((a, al)) => {
                            if a < 0.0 {
                                return Err(ConfigError { line: al, message: format!("operator.potential.amplitude {a} < 0 violates nonnegativity") });
                            }
                            a
                        }
                    };
                    let center = ChartPoint::new(chart, center);
                    let atlas = manifold.spec(manifold.resolutions[0]).build().map_err(|e| ConfigError { line: cl, message: e.to_string() })?;
                    atlas.check_point(&center).map_err(|e| ConfigError { line: cl, message: e.to_string() })?;
                    Some(PotentialConfig { center, radius, amplitude })
                }
            };
            Some(OperatorConfig { name, count, samples, study, potential })
        }
    };

    let sobolev = match root.sub("sobolev")? {
        None => SobolevConfig::default(),
        Some(s) => {
            s.check_keys(&["fields", "cap", "orders", "p", "epsilons"], &[])?;
            let d = SobolevConfig::default();
            let orders = s.uints("orders")?;
            if let Some((o, line)) = &orders {
                if o.iter().any(|&k| k > 2) || o.is_empty() {
                    return Err(ConfigError { line: *line, message: "sobolev.orders must be a nonempty subset of {0, 1, 2}".into() });
                }
            }
            let p = s.float("p")?;
            if let Some((p, line)) = p {
                if p < 1.0 {
                    return Err(ConfigError { line, message: format!("sobolev.p = {p} must be >= 1") });
                }
            }
            let epsilons = s.floats("epsilons")?;
            if let Some((e, line)) = &epsilons {
                if e.iter().any(|&x| !(x > 0.0)) {
                    return Err(ConfigError { line: *line, message: "sobolev.epsilons must be positive".into() });
                }
            }
            SobolevConfig {
                fields: s.uint("fields")?.map_or(d.fields, |(v, _)| v),
                cap: s.uint("cap")?.map_or(d.cap, |(v, _)| v),
                orders: orders.map_or(d.orders, |(v, _)| v),
                p: p.map_or(d.p, |(v, _)| v),
                epsilons: epsilons.map_or(d.epsilons, |(v, _)| v),
            }
        }
    };

    let config = ExperimentConfig { experiment, seed, output_dir, manifold, covering, operator, sobolev };
    (entry.validate)(&config).map_err(|message| ConfigError { line: exp_line, message })?;
    Ok(config)
}

pub const STUDIES: [&str; 3] = ["killing_dimension", "laplacian_eigenvalue", "manufactured_solve"];

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "experiment = \"geometry-check\"\n[manifold]\nfamily = \"flat_torus\"\nresolution = 16\n";

    #[test]
    fn minimal_config_parses() {
        let c = parse(BASE).unwrap();
        assert_eq!(c.manifold.resolutions, vec![16]);
        assert_eq!(c.output_dir, "bgkit-out/geometry-check");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse("experiment = \"nope\"\n").unwrap_err();
        assert_eq!(e.line, 1);
        let e = parse(&format!("{BASE}bogus = 3\n")).unwrap_err();
        assert_eq!(e.line, 5);
        let e = parse("experiment = \"geometry-check\"\n[manifold]\nfamily = \"flat_torus\"\nresolutions = [16, 24]\n").unwrap_err();
        assert_eq!(e.line, 4);
        let e = parse("experiment = \"geometry-check\n").unwrap_err();
        assert_eq!(e.line, 1);
        assert!(e.message.contains("syntax"));
    }

    #[test]
    fn covering_radius_bound_is_validated() {
        let src = format!("{BASE}[covering]\nradius = 3.5\n");
        let e = parse(&src).unwrap_err();
        assert_eq!(e.line, 6);
        assert!(e.message.contains("inj/2"), "{}", e.message);
    }

    #[test]
    fn every_registered_experiment_parses() {
        let blocks = "[covering]\nradius = 1.0\n[operator]\nname = \"deformation_laplacian\"\nstudy = \"killing_dimension\"\n[operator.potential]\ncenter = [1.0, 2.0]\nradius = 0.8\n";
        for e in &EXPERIMENTS {
            let src = format!("experiment = \"{}\"\n[manifold]\nfamily = \"warped_torus\"\nresolutions = [8, 16, 32]\n{blocks}", e.name);
            let c = parse(&src).unwrap_or_else(|err| panic!("{}: {err}", e.name));
            assert_eq!(c.manifold.params["a"], 2.0);
        }
    }

    #[test]
    fn missing_blocks_are_reported() {
        let e = parse("experiment = \"uc-test\"\n[manifold]\nfamily = \"flat_torus\"\nresolution = 16\n").unwrap_err();
        assert_eq!(e.line, 1);
        assert!(e.message.contains("[operator.potential]"));
        let e = parse("experiment = \"convergence\"\n[manifold]\nfamily = \"flat_torus\"\nresolution = 16\n[operator]\nstudy = \"killing_dimension\"\n").unwrap_err();
        assert!(e.message.contains("at least 3"), "{}", e.message);
    }

    #[test]
    fn nested_keys_are_checked() {
        let src = format!("{BASE}[operator]\nname = \"bochner\"\n[operator.potential]\ncenter = [0.0, 0.0]\nradius = 1.0\namplitude = -1.0\n");
        let e = parse(&src).unwrap_err();
        assert_eq!(e.line, 10);
        let src = format!("{BASE}[operator.potential]\ncentre = [0.0, 0.0]\n");
        let e = parse(&src).unwrap_err();
        assert_eq!(e.line, 6);
        assert!(e.message.contains("operator.potential.centre"), "{}", e.message);
    }

    #[test]
    fn unknown_parameters_and_families() {
        let e = parse("experiment = \"geometry-check\"\n[manifold]\nfamily = \"klein_bottle\"\nresolution = 16\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = parse("experiment = \"geometry-check\"\n[manifold]\nfamily = \"warped_torus\"\nresolution = 16\nc = 2.0\n").unwrap_err();
        assert_eq!(e.line, 5);
    }
}
