//! Train the recurrent classifier on triplets, save it, reload it, predict.
//!
//! cargo run --release --example train_classifier

use query_specificity::classifier::{train, LossConfig, Model, ModelDims, TrainConfig};
use query_specificity::embeddings::EmbeddingSpec;
use query_specificity::triplets::Triplet;
use query_specificity::Label;

fn triplets() -> Vec<Triplet> {
    let lookup = ["capital of peru", "population of oslo", "height of k2", "age of the sun", "speed of sound"];
    let broad = ["modern art", "jazz history", "marine biology", "roman empire", "climate change"];
    let mut out = Vec::new();
    for (i, a) in lookup.iter().enumerate() {
        for (j, n) in broad.iter().enumerate() {
            let p = lookup[(i + j + 1) % lookup.len()];
            out.push(Triplet { anchor: a.to_string(), positive: p.into(), negative: n.to_string(), anchor_label: Label::Lookup });
            let p = broad[(j + i + 1) % broad.len()];
            out.push(Triplet { anchor: n.to_string(), positive: p.into(), negative: a.to_string(), anchor_label: Label::Exploratory });
        }
    }
    out
}

fn main() -> query_specificity::Result<()> {
    let spec = EmbeddingSpec::default();
    let dim = spec.build()?.dim();
    let mut model = Model::new(ModelDims::desk(dim), spec, 7)?;
    let cfg = TrainConfig { epochs: 30, learning_rate: 3e-3, ..TrainConfig::default() };
    for m in train(&mut model, &triplets(), &cfg, &LossConfig::default())? {
        if m.epoch % 10 == 0 {
            println!("epoch {:>2} loss {:.4} acc {:.3}", m.epoch, m.loss, m.accuracy);
        }
    }
    let path = std::env::temp_dir().join("qspec-example.bin");
    model.save(&path)?;
    let model = Model::load(&path)?;
    for text in ["depth of the pacific", "renaissance painting"] {
        let p = model.predict(text)?;
        println!("{text:<22} {} {:.3}", p.label, p.probability);
    }
    Ok(())
}
