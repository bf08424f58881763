//! Iterative self-training and its semi-greedy variant on noisy labels.
//!
//! cargo run --release --example self_training

use query_specificity::classifier::{LossConfig, Model, ModelDims, TrainConfig};
use query_specificity::embeddings::EmbeddingSpec;
use query_specificity::iterative::{iterative_train, sgit, ClassifierLearner, HeldOut, IterConfig};
use query_specificity::triplets::Triplet;
use query_specificity::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LOOKUP: [&str; 6] = ["price of", "date of", "height of", "address of", "score of", "weight of"];
const BROAD: [&str; 6] = ["ideas about", "history of", "guide to", "overview of", "trends in", "culture of"];
const TOPICS: [&str; 8] = ["gold", "paris", "everest", "tesla", "chess", "whales", "tokyo", "opera"];

fn text(r: &mut ChaCha8Rng, heads: &[&str]) -> String {
    format!("{} {}", heads[r.gen_range(0..heads.len())], TOPICS[r.gen_range(0..TOPICS.len())])
}

fn main() -> query_specificity::Result<()> {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut samples = Vec::new();
    for i in 0..160 {
        let (own, other, label) = if i % 2 == 0 { (&LOOKUP, &BROAD, Label::Lookup) } else { (&BROAD, &LOOKUP, Label::Exploratory) };
        // 15% of the starting labels are wrong.
        let noisy = if r.gen_bool(0.15) { label.opposite() } else { label };
        samples.push(Triplet { anchor: text(&mut r, own), positive: text(&mut r, own), negative: text(&mut r, other), anchor_label: noisy });
    }
    let held_texts: Vec<String> = (0..40).map(|i| text(&mut r, if i % 2 == 0 { &LOOKUP } else { &BROAD })).collect();
    let held_labels: Vec<Label> = (0..40).map(|i| if i % 2 == 0 { Label::Lookup } else { Label::Exploratory }).collect();
    let heldout = HeldOut { texts: &held_texts, labels: &held_labels };

    let spec = EmbeddingSpec::default();
    let initial = Model::new(ModelDims::desk(spec.build()?.dim()), spec, 1)?;
    let learner = ClassifierLearner {
        train: TrainConfig { epochs: 5, learning_rate: 3e-3, ..TrainConfig::default() },
        loss: LossConfig::default(),
    };
    let cfg = IterConfig { iterations: 5, ..IterConfig::default() };
    let plain = iterative_train(&learner, initial.clone(), &samples, &cfg, Some(heldout))?;
    let greedy = sgit(&learner, initial, &samples, &cfg, Some(heldout))?;
    for (name, run) in [("iterative", &plain), ("sgit", &greedy)] {
        println!("{name}: best iteration {}", run.best_iter);
        for h in &run.history {
            println!("  iter {} train {:.3} best {:.3} held-out {:.3}", h.iter, h.train_acc, h.acc_best, h.heldout_acc.unwrap_or(f64::NAN));
        }
    }
    Ok(())
}
