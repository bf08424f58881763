//! Accuracy and F1 from predictions or from a confusion table given as fractions.
//!
//! cargo run --example metrics

use query_specificity::eval::{evaluate, ConfusionMatrix, PositiveClass};
use query_specificity::Label::{Exploratory as E, Lookup as L};

fn main() -> query_specificity::Result<()> {
    let truth = [L, L, L, E, E, E, E, L];
    let pred = [L, L, E, E, E, L, E, L];
    let m = evaluate(&pred, &truth, PositiveClass::Exploratory)?;
    println!("accuracy {:.3} f1(exploratory) {:.3} {:?}", m.accuracy, m.f1, m.confusion);

    let table = ConfusionMatrix::from_fractions(0.45, 0.15, 0.05, 0.35)?;
    for positive in [PositiveClass::Lookup, PositiveClass::Exploratory, PositiveClass::Macro] {
        println!("{positive:?}: accuracy {:.4} f1 {:.4}", table.accuracy(), table.f1(positive));
    }
    Ok(())
}
