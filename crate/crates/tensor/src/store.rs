use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::nn::Module;
use crate::{Tensor, TensorError};

pub type ParamMap = BTreeMap<String, Tensor>;

/// Snapshot of a module's parameters.
pub fn snapshot(module: &dyn Module) -> ParamMap {
    module.named_params().into_iter().map(|(n, v)| (n, v.tensor())).collect()
}

/// Load values into a module; every parameter must be present with a matching shape.
pub fn restore(module: &dyn Module, params: &ParamMap) -> crate::Result<()> {
    for (name, var) in module.named_params() {
        let t = params.get(&name).ok_or_else(|| TensorError::MissingParam(name.clone()))?;
        if t.shape() != var.shape().as_slice() {
            return Err(TensorError::Shape(format!(
                "parameter `{name}`: checkpoint {:?} vs model {:?}",
                t.shape(),
                var.shape()
            )));
        }
        var.set_value(t.clone());
    }
    Ok(())
}

/// Write tensors as little-endian f32 safetensors.
pub fn save_params(path: &Path, params: &ParamMap, metadata: Option<HashMap<String, String>>) -> crate::Result<()> {
    let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = params
        .iter()
        .map(|(k, t)| {
            let b: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            (k.clone(), b, t.shape().to_vec())
        })
        .collect();
    let views: Vec<(String, TensorView<'_>)> = bytes
        .iter()
        .map(|(k, b, s)| {
            TensorView::new(Dtype::F32, s.clone(), b)
                .map(|v| (k.clone(), v))
                .map_err(|e| TensorError::Format(e.to_string()))
        })
        .collect::<crate::Result<_>>()?;
    safetensors::serialize_to_file(views, metadata, path).map_err(|e| TensorError::Format(e.to_string()))
}

pub fn load_params(path: &Path) -> crate::Result<ParamMap> {
    let bytes = std::fs::read(path)?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| TensorError::Format(e.to_string()))?;
    let mut out = ParamMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(TensorError::Format(format!("tensor `{name}` is not f32")));
        }
        let data = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.insert(name, Tensor::new(view.shape().to_vec(), data));
    }
    Ok(out)
}
