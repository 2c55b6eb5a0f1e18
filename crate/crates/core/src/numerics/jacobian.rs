use super::{Graph, NumericsError, Tensor, Var};

/// Largest `out_dim · in_dim` a Jacobian may have.
pub const MAX_JACOBIAN_ENTRIES: usize = 1_000_000;

/// Dense Jacobian of `f` at `x`, shape `[out_dim, in_dim]`, by one
/// reverse-mode sweep per output component.
pub fn jacobian<F, E>(f: F, x: &Tensor) -> Result<Tensor, E>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var, E>,
    E: From<NumericsError>,
{
    let mut g = Graph::new();
    let input = g.param(x.clone());
    let output = f(&mut g, input)?;
    let out_shape = g.value(output).shape().to_vec();
    let (out_dim, in_dim) = (g.value(output).len(), x.len());
    if out_dim * in_dim > MAX_JACOBIAN_ENTRIES {
        return Err(NumericsError::InvalidArgument(format!(
            "jacobian {}x{} exceeds {} entries",
            out_dim, in_dim, MAX_JACOBIAN_ENTRIES
        ))
        .into());
    }
    let mut rows = vec![0.0; out_dim * in_dim];
    let mut seed = vec![0.0; out_dim];
    for i in 0..out_dim {
        seed[i] = 1.0;
        let seed_t = Tensor::new(out_shape.clone(), seed.clone())?;
        let grads = g.backward_with_seed(output, &seed_t)?;
        seed[i] = 0.0;
        if let Some(grad) = grads.get(input) {
            rows[i * in_dim..(i + 1) * in_dim].copy_from_slice(grad.data());
        }
    }
    let j = Tensor::new(vec![out_dim, in_dim], rows)?;
    if !j.all_finite() {
        return Err(NumericsError::NonFinite { op: "jacobian" }.into());
    }
    Ok(j)
}
