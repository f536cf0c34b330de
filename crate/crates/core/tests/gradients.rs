use seqvae::config::{ExperimentConfig, Task};
use seqvae::corpus::Corpus;
use seqvae::gradcheck::{check_model, GradCheckSettings};
use seqvae::rng::Rng;
use seqvae::seq2seq::Seq2SeqModel;
use seqvae::train::Dataset;

fn micro(task: Task, style: &str) -> (Seq2SeqModel, Dataset) {
    let corpus_name = if task.is_paired() { "qgen" } else { "svo" };
    let corpus = Corpus::generate(corpus_name, 40, 3).unwrap();
    let data = Dataset::build(&corpus, task, 20, 5).unwrap();
    let mut cfg = ExperimentConfig::new()
        .with("task", task.name())
        .unwrap()
        .with("emb_dim", 8)
        .unwrap()
        .with("hidden_dim", 12)
        .unwrap();
    if task.has_latent() {
        cfg.set("latent_dim", "4").unwrap();
    }
    if task.attention().is_some() {
        cfg.set("attention_style", style).unwrap();
    }
    cfg.validate().unwrap();
    let spec = cfg.model_spec(data.vocab.len()).unwrap();
    assert_eq!(spec.vocab_size, 20);
    (Seq2SeqModel::new(spec, &mut Rng::new(5)).unwrap(), data)
}

#[test]
fn every_variant_matches_finite_differences() {
    let mut cases: Vec<(Task, &str)> = Task::ALL.iter().map(|&t| (t, "multiplicative")).collect();
    cases.push((Task::VedVattnHbar, "additive"));
    cases.push((Task::DedDattn, "additive"));
    for (task, style) in cases {
        let (model, data) = micro(task, style);
        let r = check_model(&model, &data.train[..2], &GradCheckSettings::default()).unwrap();
        assert!(
            r.max_rel_error < 1e-4,
            "{} ({style}): worst {} at {} {:?}",
            task.name(),
            r.max_rel_error,
            r.worst,
            r.worst_values
        );
        assert_eq!(r.checked, model.store.num_values());
    }
}
