/// Whether the decoder may see ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingMode {
    Train,
    Eval,
}

/// Inverse-sigmoid decay of the teacher-forcing probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingSchedule {
    pub decay: f64,
    pub mode: SamplingMode,
}

impl SamplingSchedule {
    pub fn train(decay: f64) -> Self {
        Self { decay, mode: SamplingMode::Train }
    }

    pub fn eval() -> Self {
        Self { decay: 1.0, mode: SamplingMode::Eval }
    }
}

/// `s / (s + exp(iteration / s))` in training mode, 0 in evaluation mode.
pub fn sampling_probability(iteration: u64, schedule: &SamplingSchedule) -> f64 {
    match schedule.mode {
        SamplingMode::Eval => 0.0,
        SamplingMode::Train => {
            let s = schedule.decay;
            let p = s / (s + (iteration as f64 / s).exp());
            p.clamp(0.0, 1.0)
        }
    }
}
