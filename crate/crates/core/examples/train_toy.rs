//! Trains the toy model on synthetic click tracks and scores it on held-out clips.
//!
//! cargo run --release --example train_toy -- [epochs] [n_train] [out.bin]

use std::path::PathBuf;

use streambeat::audio::FeatureExtractor;
use streambeat::dbn::DbnConfig;
use streambeat::encoder::BlockConfig;
use streambeat::model::Model;
use streambeat::pipeline::evaluate_corpus;
use streambeat::train::{examples_from_clip, gen_corpus, train, CorpusSpec, TrainConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().map_or(Ok(12), |s| s.parse())?;
    let n_train = args.get(1).map_or(Ok(200), |s| s.parse())?;
    let out = PathBuf::from(args.get(2).map_or("toy_model.bin", String::as_str));

    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let ex = FeatureExtractor::new();
    let to_examples = |spec: &CorpusSpec| {
        gen_corpus(spec)
            .iter()
            .flat_map(|c| {
                examples_from_clip(
                    c,
                    &ex,
                    cfg.model.n_tempo_bins,
                    cfg.segment_s,
                    cfg.widen_targets,
                )
            })
            .collect::<Vec<_>>()
    };
    let train_set = to_examples(&CorpusSpec {
        n_clips: n_train,
        seed: 1,
        ..CorpusSpec::default()
    });
    let val_set = to_examples(&CorpusSpec {
        n_clips: 20,
        seed: 2,
        ..CorpusSpec::default()
    });
    println!(
        "{} parameters, {} training excerpts",
        cfg.model.param_count(),
        train_set.len()
    );

    let (params, report) = train(&cfg, &train_set, &val_set, |r| {
        let e = r.train_loss.len();
        println!(
            "epoch {e:>3}  train {:.4}  val {:.4}  lr {:.1e}  {:.0}s",
            r.train_loss[e - 1],
            r.val_loss[e - 1],
            r.lr[e - 1],
            r.seconds
        );
    })?;
    let model = Model::new(cfg.model.clone(), params)?;
    model.save(&out)?;
    println!("saved {} after {:.0}s", out.display(), report.seconds);

    let test = gen_corpus(&CorpusSpec {
        n_clips: 50,
        seed: 3,
        ..CorpusSpec::default()
    });
    for n in [16, 1] {
        let block = BlockConfig::new(64, n, n)?;
        let s = evaluate_corpus(&model, &test, block, &DbnConfig::default(), None)?;
        println!(
            "N_c = N_r = {n:>2}: beat F1 {:.3}, downbeat F1 {:.3}",
            s.beat_f1, s.downbeat_f1
        );
    }
    Ok(())
}
