//! JSON problem files.
//!
//! ```json
//! { "blocks": [{"name": "x", "size": 2}],
//!   "qbar": 2,
//!   "factors": [{"terms": [{"coeff": 1.0, "factors": [{"block": "x", "vector": [1.0, 0.0]}]},
//!                          {"coeff": -3.0, "factors": []}],
//!                "density": {"type": "gnd", "q": 2.0}}] }
//! ```
//!
//! A linear form may be written sparsely as
//! `{"block": "x", "index": [k, ...], "value": [v, ...]}`; the serializer
//! uses that form when fewer than half the entries are nonzero. Factors may
//! carry a `"label"`, and the document may carry `"x_init"` and a
//! `"generator"` object describing how to regenerate the data.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::densities::Density;
use crate::error::{Error, Result};

use super::{BlockLayout, Factor, LinearForm, MultiaffineExpr, MultiaffineModel, ResidualTerm};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRepr {
    blocks: Vec<BlockRepr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    qbar: Option<u32>,
    factors: Vec<FactorRepr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x_init: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockRepr {
    name: String,
    size: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    terms: Vec<TermRepr>,
    density: Density,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermRepr {
    coeff: f64,
    #[serde(default)]
    factors: Vec<FormRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FormRepr {
    block: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vector: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    index: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<Vec<f64>>,
}

/// A model together with the optional initial point and generator metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemDocument {
    pub model: MultiaffineModel,
    pub x_init: Option<Vec<f64>>,
    pub generator: Option<Value>,
}

impl ProblemDocument {
    pub fn new(model: MultiaffineModel) -> Self {
        Self {
            model,
            x_init: None,
            generator: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: FileRepr = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        from_repr(repr)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&to_repr(self)?)?)
    }
}

pub fn model_from_json(text: &str) -> Result<MultiaffineModel> {
    Ok(ProblemDocument::from_json(text)?.model)
}

pub fn model_to_json(model: &MultiaffineModel) -> Result<String> {
    ProblemDocument::new(model.clone()).to_json()
}

fn from_repr(repr: FileRepr) -> Result<ProblemDocument> {
    let mut layout = BlockLayout::new();
    for b in repr.blocks {
        layout.push(b.name, b.size)?;
    }
    let mut factors = Vec::with_capacity(repr.factors.len());
    for (h, f) in repr.factors.into_iter().enumerate() {
        let mut terms = Vec::with_capacity(f.terms.len());
        for (m, t) in f.terms.into_iter().enumerate() {
            let ctx = |e: Error| Error::InvalidModel(format!("factor {h}, term {m}: {e}"));
            let mut forms = Vec::with_capacity(t.factors.len());
            for form in t.factors {
                let b = layout.id(&form.block).map_err(ctx)?;
                let size = layout.size(b);
                let lf = match (form.vector, form.index, form.value) {
                    (Some(v), None, None) => {
                        if v.len() != size {
                            return Err(ctx(Error::DimensionMismatch {
                                expected: size,
                                got: v.len(),
                                context: format!("vector on block `{}`", form.block),
                            }));
                        }
                        LinearForm::dense(&v)
                    }
                    (None, Some(idx), Some(val)) if idx.len() == val.len() => {
                        LinearForm::sparse(size, idx.into_iter().zip(val)).map_err(ctx)?
                    }
                    _ => {
                        return Err(ctx(Error::Parse(format!(
                            "linear form on block `{}` needs either `vector` or matching `index`/`value`",
                            form.block
                        ))))
                    }
                };
                forms.push((b, lf));
            }
            terms.push(ResidualTerm::new(t.coeff, forms).map_err(ctx)?);
        }
        factors.push(Factor {
            expr: MultiaffineExpr::new(terms),
            density: f.density,
            label: f.label,
        });
    }
    let model = MultiaffineModel::new(layout, factors, repr.qbar)?;
    if let Some(x) = &repr.x_init {
        if x.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: x.len(),
                context: "x_init".into(),
            });
        }
    }
    Ok(ProblemDocument {
        model,
        x_init: repr.x_init,
        generator: repr.generator,
    })
}

fn to_repr(doc: &ProblemDocument) -> Result<FileRepr> {
    let model = &doc.model;
    let layout = &model.layout;
    let blocks = layout
        .ids()
        .map(|b| BlockRepr {
            name: layout.name(b).to_string(),
            size: layout.size(b),
        })
        .collect();
    let mut factors = Vec::with_capacity(model.factors.len());
    for (h, f) in model.factors.iter().enumerate() {
        if let Density::Custom(c) = &f.density {
            return Err(Error::InvalidModel(format!(
                "factor {h}: custom density `{}` cannot be written to a problem file",
                c.name
            )));
        }
        let terms = f
            .expr
            .terms
            .iter()
            .map(|t| TermRepr {
                coeff: t.coeff,
                factors: t
                    .factors
                    .iter()
                    .map(|(b, form)| {
                        let block = layout.name(*b).to_string();
                        if 2 * form.nnz() < form.dim() {
                            FormRepr {
                                block,
                                vector: None,
                                index: Some(form.entries().iter().map(|e| e.0).collect()),
                                value: Some(form.entries().iter().map(|e| e.1).collect()),
                            }
                        } else {
                            FormRepr {
                                block,
                                vector: Some(form.to_dense()),
                                index: None,
                                value: None,
                            }
                        }
                    })
                    .collect(),
            })
            .collect();
        factors.push(FactorRepr {
            label: f.label.clone(),
            terms,
            density: f.density.clone(),
        });
    }
    Ok(FileRepr {
        blocks,
        qbar: Some(model.qbar),
        factors,
        x_init: doc.x_init.clone(),
        generator: doc.generator.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "blocks": [{"name": "a", "size": 3}, {"name": "b", "size": 1}],
        "factors": [
            {"label": "bilinear",
             "terms": [{"coeff": 2.0, "factors": [{"block": "a", "index": [2], "value": [1.5]},
                                                  {"block": "b", "vector": [1.0]}]},
                       {"coeff": -1.0}],
             "density": {"type": "gnd", "q": 1.0}},
            {"terms": [{"coeff": 1.0, "factors": [{"block": "a", "vector": [1.0, 2.0, 3.0]}]}],
             "density": {"type": "gnd", "q": 2.0, "scale": 0.5}},
            {"terms": [{"coeff": 1.0, "factors": [{"block": "b", "vector": [1.0]}]}],
             "density": {"type": "flat"}}
        ]
    }"#;

    #[test]
    fn parse_and_roundtrip() {
        let doc = ProblemDocument::from_json(SAMPLE).unwrap();
        assert_eq!(doc.model.qbar, 2);
        assert_eq!(doc.model.dim(), 4);
        assert_eq!(doc.model.factors[0].label.as_deref(), Some("bilinear"));
        let text = doc.to_json().unwrap();
        let again = ProblemDocument::from_json(&text).unwrap();
        assert_eq!(doc, again);
        assert_eq!(text, again.to_json().unwrap());
    }

    #[test]
    fn errors_name_factor_and_term() {
        let bad = SAMPLE.replace(r#""block": "b", "vector""#, r#""block": "zz", "vector""#);
        let err = ProblemDocument::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("factor 0, term 0"), "{err}");
        assert!(err.contains("zz"), "{err}");

        let dup = SAMPLE.replace(
            r#"{"block": "b", "vector": [1.0]}]},"#,
            r#"{"block": "a", "vector": [1.0, 0.0, 0.0]}]},"#,
        );
        let err = ProblemDocument::from_json(&dup).unwrap_err().to_string();
        assert!(err.contains("degree 2"), "{err}");

        assert!(matches!(
            ProblemDocument::from_json("{"),
            Err(Error::Parse(_))
        ));
        let low = SAMPLE.replace(r#""blocks""#, r#""qbar": 1, "blocks""#);
        assert!(ProblemDocument::from_json(&low)
            .unwrap_err()
            .to_string()
            .contains("qbar"));
    }
}
