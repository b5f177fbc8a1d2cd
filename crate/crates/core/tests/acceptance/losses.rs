use lmpgan::gan::{loss_d, loss_dcl, loss_gdl, GanConfig, GenLossTerms};

use crate::Outcome;

#[allow(clippy::approx_constant)]
pub fn run() -> Outcome {
    // Y = [[0,1],[0,1]], Yhat = 0: two horizontal mismatches of 1.
    let gdl = loss_gdl(&[0.0; 4], &[0.0, 1.0, 0.0, 1.0], 2, 2, 1).unwrap();
    let dcl = [
        loss_dcl(&[0.3], &[0.5], &[0.2]).unwrap(),
        loss_dcl(&[0.1], &[0.5], &[0.2]).unwrap(),
        loss_dcl(&[0.3], &[0.2], &[0.2]).unwrap(),
    ];
    let d = loss_d(0.5, 0.5);
    let d_oracle = 2.0 * 2f64.ln();
    let g = GenLossTerms {
        adv: 0.6931,
        lp: 0.5,
        gdl: 0.3,
        dcl: 1.0,
    }
    .weighted(&GanConfig::default());
    let pass = gdl == 2.0 && dcl == [0.0, 2.0, 1.0] && (d - d_oracle).abs() < 1e-12 && (g - 1.1386).abs() < 1e-4;
    Outcome::new(
        pass,
        format!("gdl {gdl}, dcl {dcl:?}, loss_D(0.5,0.5) {d:.15} vs 2ln2, loss_G example {g:.6}"),
    )
}
