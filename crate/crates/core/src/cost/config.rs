//! JSON cost configuration:
//! `{"cost": {"kind": ..., "params": {...}}, "domain": {"source": ..., "target": ...}, "diagonal_margin": ...}`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CostHandle, CostKind, DomainPair, Engine, Expr};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CostSpec {
    pub kind: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CostConfig {
    pub cost: CostSpec,
    #[serde(default)]
    pub domain: Option<DomainPair>,
    #[serde(default)]
    pub diagonal_margin: Option<f64>,
    #[serde(default)]
    pub engine: Option<Engine>,
    #[serde(default)]
    pub fd_scale: Option<f64>,
    #[serde(default)]
    pub cross_validate: Option<bool>,
}

impl CostConfig {
    pub fn from_value(v: &Value) -> Result<CostConfig> {
        serde_json::from_value(v.clone()).map_err(|e| Error::BadConfig(e.to_string()))
    }

    pub fn build(&self) -> Result<CostHandle> {
        let kind = match self.cost.kind.as_str() {
            "neg_inner_product" => CostKind::NegInnerProduct,
            "half_squared_distance" => CostKind::HalfSquaredDistance,
            "inverse_square" => CostKind::InverseSquare,
            "user_expression" => {
                let src = self
                    .cost
                    .params
                    .get("expr")
                    .and_then(Value::as_str)
                    .ok_or_else(|| Error::BadConfig("user_expression needs params.expr".into()))?;
                let singular = self
                    .cost
                    .params
                    .get("singular_on_diagonal")
                    .and_then(Value::as_bool)
                    .unwrap_or(false);
                CostKind::UserExpression {
                    expr: Arc::new(Expr::parse(src)?),
                    source: src.to_string(),
                    singular_on_diagonal: singular,
                }
            }
            other => return Err(Error::BadConfig(format!("unknown cost kind '{other}'"))),
        };
        let mut c = CostHandle::new(kind);
        if let Some(pair) = &self.domain {
            let pair = DomainPair::new(pair.source.clone(), pair.target.clone())?;
            c = c.with_domains(pair);
        }
        if let Some(m) = self.diagonal_margin {
            if !(m > 0.0) {
                return Err(Error::BadConfig("diagonal_margin must be positive".into()));
            }
            c.diagonal_margin = m;
        }
        if let Some(e) = self.engine {
            c.engine = e;
        }
        if let Some(s) = self.fd_scale {
            c.fd_scale = s;
        }
        if let Some(b) = self.cross_validate {
            c.cross_validate = b;
        }
        Ok(c)
    }
}

impl CostHandle {
    /// Reads the cost section of a larger JSON config; unknown keys are ignored.
    pub fn from_config(v: &Value) -> Result<CostHandle> {
        CostConfig::from_value(v)?.build()
    }

    pub fn to_spec(&self) -> CostSpec {
        let (kind, params) = match &self.kind {
            CostKind::NegInnerProduct => ("neg_inner_product", Value::Null),
            CostKind::HalfSquaredDistance => ("half_squared_distance", Value::Null),
            CostKind::InverseSquare => ("inverse_square", Value::Null),
            CostKind::UserExpression { source, singular_on_diagonal, .. } => (
                "user_expression",
                serde_json::json!({"expr": source, "singular_on_diagonal": singular_on_diagonal}),
            ),
        };
        CostSpec { kind: kind.to_string(), params }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parses_full_config() {
        let v = json!({
            "cost": {"kind": "inverse_square", "params": {}},
            "domain": {
                "source": {"kind": "ball", "center": [0.0, 0.0], "radius": 0.5},
                "target": {"kind": "box", "lo": [2.0, -1.0], "hi": [3.0, 1.0]}
            },
            "diagonal_margin": 0.01,
            "other_section": {"ignored": true}
        });
        let c = CostHandle::from_config(&v).unwrap();
        assert_eq!(c.name(), "inverse_square");
        assert_eq!(c.diagonal_margin, 0.01);
        assert_eq!(c.dim(), Some(2));
    }

    #[test]
    fn default_margin_tracks_diameter() {
        let v = json!({
            "cost": {"kind": "inverse_square"},
            "domain": {
                "source": {"kind": "box", "lo": [0.0], "hi": [1.0]},
                "target": {"kind": "box", "lo": [2.0], "hi": [3.0]}
            }
        });
        let c = CostHandle::from_config(&v).unwrap();
        assert!((c.diagonal_margin - 3e-3).abs() < 1e-15);
    }

    #[test]
    fn user_expression_roundtrip() {
        let v = json!({"cost": {"kind": "user_expression", "params": {"expr": "norm(x - xbar)^4"}}});
        let c = CostHandle::from_config(&v).unwrap();
        let spec = serde_json::to_value(c.to_spec()).unwrap();
        let again = CostHandle::from_config(&json!({ "cost": spec })).unwrap();
        assert_eq!(c.name(), again.name());
    }

    #[test]
    fn rejects_unknown_kind() {
        let v = json!({"cost": {"kind": "mystery"}});
        assert!(matches!(CostHandle::from_config(&v), Err(Error::BadConfig(_))));
    }
}
