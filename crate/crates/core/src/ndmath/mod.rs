//! Dense `f64` math with reverse-mode gradients, sized for small MLPs.

mod adam;
mod gradcheck;
mod graph;
mod mlp;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, GradCheck};
pub use graph::{Gradients, Graph, Var};
pub use mlp::{mlp_forward, mlp_graph, Activation, Layer, MlpSpec};
pub use tensor::{ParamTape, Tensor};

/// Records every parameter of `tape` as a graph leaf, in tape order.
pub fn bind(g: &mut Graph, tape: &ParamTape) -> Vec<Var> {
    tape.params().iter().map(|p| g.leaf(p.clone())).collect()
}

/// Overwrites the gradients of `tape` with the adjoints of `vars`.
pub fn write_grads(tape: &mut ParamTape, grads: &Gradients, vars: &[Var]) -> crate::Result<()> {
    for (i, &v) in vars.iter().enumerate() {
        tape.set_grad(i, grads.wrt(v))?;
    }
    Ok(())
}
