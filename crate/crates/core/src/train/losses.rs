use crate::tensor::nn;
use crate::tensor::{Graph, TensorError, Var};

/// Mean absolute error over every box coordinate.
pub fn layout_loss(g: &mut Graph, pred: Var, gt: Var) -> Result<Var, TensorError> {
    if g.shape(pred) != g.shape(gt) {
        return Err(TensorError::Shape {
            op: "layout_loss",
            lhs: g.shape(pred).to_vec(),
            rhs: g.shape(gt).to_vec(),
        });
    }
    nn::l1_mean(g, pred, gt)
}

/// Mean per-pixel L1 between warped previous frames and the frames they
/// should match. Both are `[T - 1, H, W, C]` (or any equal shapes); the
/// mean over all elements equals the average over frame pairs of the
/// per-frame mean.
pub fn flow_loss(g: &mut Graph, warped: Var, target: Var) -> Result<Var, TensorError> {
    if g.shape(warped) != g.shape(target) {
        return Err(TensorError::Shape {
            op: "flow_loss",
            lhs: g.shape(warped).to_vec(),
            rhs: g.shape(target).to_vec(),
        });
    }
    nn::l1_mean(g, warped, target)
}
