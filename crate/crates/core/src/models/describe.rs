use super::{Model, ModelSpec};
use crate::error::Result;
use crate::nn::Module;

/// One line of a layer/shape table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRow {
    pub layer: String,
    pub op: String,
    pub input: String,
    pub output: String,
}

impl LayerRow {
    pub fn new(layer: &str, op: String, input: String, output: String) -> Self {
        Self { layer: layer.to_string(), op, input, output }
    }
}

/// Tab-separated layer table for `spec`, followed by the parameter count.
pub fn describe(spec: &ModelSpec) -> Result<String> {
    let model = Model::new(spec.clone(), 0)?;
    let mut out = String::from("Layer\tType\tInput size\tOutput size\n");
    for r in model.rows() {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.layer, r.op, r.input, r.output));
    }
    out.push_str(&format!("\nTrainable parameters\t{}\n", model.param_count()));
    Ok(out)
}
