use clap::ValueEnum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Srn,
    Lstm,
    Recurrence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Copy,
    Charlm,
    Sentiment,
    #[value(name = "attention-toy")]
    AttentionToy,
}

/// Everything a training run depends on; the seed fully determines the run.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub hidden_size: usize,
    pub rho: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub task: Task,
    pub data_path: Option<String>,
    pub remember: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> rnn::Result<()> {
        if self.hidden_size == 0 || self.rho == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(rnn::Error::Config(
                "hidden, rho, epochs and batch size must be positive".into(),
            ));
        }
        // lr = 0 is allowed: a no-op update, useful for plumbing checks.
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(rnn::Error::Config("lr must be non-negative".into()));
        }
        Ok(())
    }
}
