use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Smoothing term of the soft Dice ratio.
pub const DICE_EPS: f64 = 1e-5;

/// `ce_weight·CE + dice_weight·(1 − mean soft Dice)`.
pub fn combined_loss(g: &mut Graph, logits: Var, targets: &[usize], ce_weight: f64, dice_weight: f64) -> Result<Var> {
    let (_, k, _, _) = g.value(logits).dims4("combined_loss")?;
    if k < 2 {
        return Err(Error::Config(format!("combined_loss needs at least 2 classes, got {k}")));
    }
    let ce = g.softmax_cross_entropy(logits, targets)?;
    let dice = g.soft_dice_loss(logits, targets, DICE_EPS)?;
    let ce = g.scale(ce, ce_weight);
    let dice = g.scale(dice, dice_weight);
    g.add(ce, dice)
}
