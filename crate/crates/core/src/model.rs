//! JSON model definitions and their validated in-memory form.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bundle::{AnchoredBundle, StructureFunctions};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::exprjet::{eval_value, parse_in, Expr, Scope};
use crate::finsler::{FinslerData, MetricKind};
use crate::gallery;
use crate::leaf::LeafModel;

/// Number of quasi-random points validated at load time.
pub const PROBE_POINTS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureEntry {
    /// 1-based frame index.
    pub upper: usize,
    /// 1-based, distinct.
    pub lower: [usize; 2],
    pub expr: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub expr: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeafSpec {
    pub q: usize,
    /// Values of `x_{q+1..n}` on the leaf.
    pub locus: Vec<f64>,
}

/// Default evaluation data used by the CLI when no flags are given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probe {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Second flag vector.
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    #[serde(default)]
    pub flag_curvature: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub n: usize,
    pub k: usize,
    /// `rho[i][a]` is `rho^{i+1}_{a+1}`, an expression in `x` only.
    pub rho: Vec<Vec<String>>,
    #[serde(default)]
    pub c: Vec<StructureEntry>,
    pub metric: MetricSpec,
    #[serde(default)]
    pub force: Option<Vec<String>>,
    #[serde(default)]
    pub perturbation: Option<Vec<StructureEntry>>,
    pub domain: Domain,
    #[serde(default)]
    pub leaf: Option<LeafSpec>,
    #[serde(default)]
    pub probe: Option<Probe>,
    #[serde(default)]
    pub expected: Option<Expected>,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<ModelSpec> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }
}

/// A validated model.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub bundle: AnchoredBundle,
    pub fd: FinslerData,
    /// The parsed `F` or `L` expression.
    pub metric: Expr,
    pub force: Option<Vec<Expr>>,
    pub theta: Option<StructureFunctions>,
    /// The bundle with bracket `C + Theta`.
    pub perturbed: Option<AnchoredBundle>,
    pub leaf: Option<Arc<LeafModel>>,
}

fn in_field<T>(field: impl Into<String>, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Field { field: field.into(), source: Box::new(e) })
}

fn structure(entries: &[StructureEntry], n: usize, k: usize, field: &str) -> Result<StructureFunctions> {
    let mut c = StructureFunctions::zero(k);
    for (idx, e) in entries.iter().enumerate() {
        let name = format!("{field}[{idx}]");
        let [a, b] = e.lower;
        if e.upper == 0 || a == 0 || b == 0 {
            return in_field(name, Err(Error::Spec("frame indices are 1-based".into())));
        }
        let expr = in_field(name.clone(), parse_in(&e.expr, Scope::base(n)).map_err(Error::from))?;
        in_field(name, c.set(e.upper - 1, a - 1, b - 1, expr))?;
    }
    Ok(c)
}

impl Model {
    pub fn from_spec(spec: ModelSpec) -> Result<Model> {
        let (n, k) = (spec.n, spec.k);
        if n == 0 || k == 0 {
            return Err(Error::Spec("n and k must be positive".into()));
        }
        in_field("domain", spec.domain.validate())?;
        if spec.domain.n() != n || spec.domain.k() != k {
            return in_field(
                "domain",
                Err(Error::Dimension(format!(
                    "boxes have {} x and {} y intervals, expected {n} and {k}",
                    spec.domain.n(),
                    spec.domain.k()
                ))),
            );
        }
        if spec.rho.len() != n || spec.rho.iter().any(|r| r.len() != k) {
            return in_field("rho", Err(Error::Dimension(format!("anchor must be {n} rows of {k} expressions"))));
        }
        let mut rho = Vec::with_capacity(n * k);
        for (i, row) in spec.rho.iter().enumerate() {
            for (a, src) in row.iter().enumerate() {
                let e = parse_in(src, Scope::base(n)).map_err(Error::from);
                rho.push(in_field(format!("rho[{i}][{a}]"), e)?);
            }
        }
        let c = structure(&spec.c, n, k, "c")?;
        let bundle = AnchoredBundle::new(n, k, rho, c)?;
        let metric = in_field("metric.expr", parse_in(&spec.metric.expr, Scope::full(n, k)).map_err(Error::from))?;
        let fd = match spec.metric.kind {
            MetricKind::Finsler => FinslerData::finsler(&metric, n, k, spec.domain.clone()),
            MetricKind::Lagrangian => FinslerData::lagrangian(&metric, n, k, spec.domain.clone()),
        };
        let force = match &spec.force {
            None => None,
            Some(w) => {
                if w.len() != k {
                    return in_field("force", Err(Error::Dimension(format!("force needs {k} components"))));
                }
                let mut out = Vec::with_capacity(k);
                for (a, src) in w.iter().enumerate() {
                    let e = parse_in(src, Scope::full(n, k)).map_err(Error::from);
                    out.push(in_field(format!("force[{a}]"), e)?);
                }
                Some(out)
            }
        };
        let probes = spec.domain.sample(PROBE_POINTS, 0);
        for p in &probes {
            in_field("metric", fd.metric_at(&p.x, &p.y))?;
            if fd.is_homogeneous() {
                let f = in_field("metric", eval_value(&metric, &p.x, &p.y))?;
                if !(f > 0.0) {
                    return in_field("metric", Err(Error::Spec(format!("F = {f} is not positive at {p:?}"))));
                }
            }
            in_field("rho", bundle.anchor_at(&p.x).map(|_| ()))?;
            in_field("c", bundle.structure_at(&p.x).map(|_| ()))?;
        }
        let base: Vec<Vec<f64>> = probes.iter().map(|p| p.x.clone()).collect();
        let (theta, perturbed) = match &spec.perturbation {
            None => (None, None),
            Some(entries) => {
                let th = structure(entries, n, k, "perturbation")?;
                let pb = in_field("perturbation", bundle.with_perturbation(&th, &base))?;
                (Some(th), Some(pb))
            }
        };
        let leaf = match &spec.leaf {
            None => None,
            Some(ls) => {
                let leaf_probes: Vec<Vec<f64>> = base.iter().map(|x| x[..ls.q.min(n)].to_vec()).collect();
                let lm = in_field(
                    "leaf",
                    LeafModel::new(bundle.clone(), fd.clone(), ls.q, ls.locus.clone(), &leaf_probes),
                )?;
                if !spec.domain.contains_x(&lm.full_x(&leaf_probes[0])?, 0.0) {
                    return in_field("leaf", Err(Error::Leaf("locus lies outside the x box".into())));
                }
                Some(Arc::new(lm))
            }
        };
        if let Some(p) = &spec.probe {
            if p.x.len() != n || p.y.len() != k || p.v.len() != k {
                return in_field("probe", Err(Error::Dimension(format!("probe needs x of length {n}, y and v of length {k}"))));
            }
        }
        Ok(Model { spec, bundle, fd, metric, force, theta, perturbed, leaf })
    }

    pub fn from_json(text: &str) -> Result<Model> {
        Model::from_spec(ModelSpec::from_json(text)?)
    }

    /// `gallery:NAME` or a path to a JSON file.
    pub fn load(source: &str) -> Result<Model> {
        match source.strip_prefix("gallery:") {
            Some(name) => Model::from_json(gallery::source(name)?),
            None => Model::from_json(&std::fs::read_to_string(Path::new(source))?),
        }
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    /// Probe data from the model file, or the domain centre with the first frame
    /// direction as `y` and the second as `v`.
    pub fn probe(&self) -> Probe {
        if let Some(p) = &self.spec.probe {
            return p.clone();
        }
        let k = self.k();
        let mut y = vec![0.0; k];
        y[0] = 1.0;
        let mut v = vec![0.0; k];
        v[1 % k] = 1.0;
        Probe { x: self.spec.domain.centre(), y, v }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EUCLID: &str = r#"{
        "name": "plane", "n": 2, "k": 2,
        "rho": [["1", "0"], ["0", "1"]],
        "metric": {"kind": "finsler", "expr": "sqrt(y1^2 + y2^2)"},
        "domain": {"x_box": [[-1, 1], [-1, 1]], "y_box": [[-2, 2], [-2, 2]]}
    }"#;

    #[test]
    fn loads_minimal_model() {
        let m = Model::from_json(EUCLID).unwrap();
        assert_eq!(m.bundle.k, 2);
        assert_eq!(m.fd.domain.y_min, 1e-3);
        let back = ModelSpec::from_json(&m.spec.to_json()).unwrap();
        assert_eq!(back, m.spec);
    }

    #[test]
    fn diagnostics_name_the_field() {
        let bad = EUCLID.replace("sqrt(y1^2 + y2^2)", "sqrt(y1^2 + z2)");
        let msg = Model::from_json(&bad).unwrap_err().to_string();
        assert!(msg.starts_with("metric.expr"), "{msg}");
        let bad = EUCLID.replace(r#"["0", "1"]"#, r#"["0", "y1"]"#);
        let msg = Model::from_json(&bad).unwrap_err().to_string();
        assert!(msg.starts_with("rho[1][1]"), "{msg}");
    }

    #[test]
    fn indefinite_metric_is_rejected() {
        let bad = EUCLID.replace("sqrt(y1^2 + y2^2)", "sqrt(y1^2 + y2^2) + 2*y1");
        assert!(Model::from_json(&bad).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = EUCLID.replace(r#""n": 2"#, r#""n": 2, "colour": 1"#);
        assert!(matches!(Model::from_json(&bad), Err(Error::Json(_))));
    }
}
