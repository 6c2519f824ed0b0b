use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cell::{self, Dropout, LstmState};
use super::optim::{clip_grad_norm, sgd_update, Adam, OptimizerKind};
use super::{LmConfig, LmError, LstmModel};
use crate::model::mean_nll;
use crate::tokenizer::{Reserved, TokenId};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training NLL in nats, measured with dropout active.
    pub train_nll: f64,
    /// Mean per-line validation NLL in nats, or NaN without validation data.
    pub valid_nll: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Trains from scratch; see [`train_with_progress`].
pub fn train<S: AsRef<[TokenId]>>(
    train_seqs: &[S],
    valid_seqs: &[S],
    config: &LmConfig,
) -> Result<(LstmModel, TrainLog), LmError> {
    train_with_progress(train_seqs, valid_seqs, config, |_| {})
}

/// Concatenates the training lines behind a leading `<EOS>`, cuts the stream
/// into `batch_size` contiguous lanes, and walks them in `bptt_len` windows,
/// carrying each lane's state from one window to the next. Returns the
/// parameters with the lowest validation NLL.
pub fn train_with_progress<S: AsRef<[TokenId]>>(
    train_seqs: &[S],
    valid_seqs: &[S],
    config: &LmConfig,
    mut progress: impl FnMut(&EpochLog),
) -> Result<(LstmModel, TrainLog), LmError> {
    config.validate()?;
    let mut stream = vec![Reserved::Eos.id()];
    for s in train_seqs {
        stream.extend_from_slice(s.as_ref());
    }
    if stream.len() < 2 {
        return Err(LmError::EmptyData);
    }
    let v = config.vocab_size;
    let check = |ids: &[TokenId]| match ids.iter().find(|id| id.index() >= v) {
        Some(id) => Err(LmError::IdOutOfRange(id.0, v)),
        None => Ok(()),
    };
    check(&stream)?;
    for s in valid_seqs {
        check(s.as_ref())?;
    }

    let n_pred = stream.len() - 1;
    let lanes = config.batch_size.min(n_pred);
    let lane_len = n_pred / lanes;
    let lane_starts: Vec<usize> = (0..lanes).map(|b| b * lane_len).collect();

    let mut model = LstmModel::new(config.clone())?;
    let reset_on = model.reset_token();
    let mut drop_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = match config.optimizer {
        OptimizerKind::Adam => Some(Adam::new(model.params(), config.learning_rate)),
        OptimizerKind::Sgd => None,
    };
    let has_valid = valid_seqs.iter().any(|s| !s.as_ref().is_empty());

    let mut log = TrainLog::default();
    let mut best: Option<(f64, LstmModel)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let mut states: Vec<LstmState> = (0..lanes).map(|_| model.zero_state()).collect();
        let mut total_nll = 0.0;
        let mut total_tokens = 0usize;
        let mut offset = 0;
        while offset < lane_len {
            let width = config.bptt_len.min(lane_len - offset);
            let mut grads = model.params().zeros_like();
            let scale = 1.0 / (width * lanes) as f64;
            for (b, state) in states.iter_mut().enumerate() {
                let start = lane_starts[b] + offset;
                let inputs = &stream[start..start + width];
                let targets = &stream[start + 1..start + 1 + width];
                let dropout = Some(Dropout {
                    rng: &mut drop_rng,
                    rate: config.dropout_rate,
                });
                let cache = cell::forward_window(model.params(), inputs, state, reset_on, dropout)
                    .map_err(|_| LmError::DivergedTraining { epoch })?;
                total_nll += cell::window_nll(&cache, targets);
                total_tokens += width;
                cell::backward_window(model.params(), &cache, targets, scale, &mut grads);
            }
            clip_grad_norm(&mut grads, config.clip_norm);
            match adam.as_mut() {
                Some(adam) => adam.update(model.params_mut(), &grads),
                None => sgd_update(model.params_mut(), &grads, config.learning_rate),
            }
            if !model.params().is_finite() {
                return Err(LmError::DivergedTraining { epoch });
            }
            offset += width;
        }
        let train_nll = total_nll / total_tokens as f64;
        if !train_nll.is_finite() {
            return Err(LmError::DivergedTraining { epoch });
        }
        let valid_nll = if has_valid {
            mean_nll(&model, valid_seqs)
        } else {
            f64::NAN
        };
        let entry = EpochLog {
            epoch,
            train_nll,
            valid_nll,
            wall_time: started.elapsed(),
        };
        tracing::info!(epoch, train_nll, valid_nll, "epoch finished");
        progress(&entry);
        log.epochs.push(entry);

        if !has_valid {
            log.best_epoch = epoch;
            continue;
        }
        if best.as_ref().map_or(true, |(b, _)| valid_nll < *b) {
            best = Some((valid_nll, model.clone()));
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if config.early_stop_patience > 0 && since_best >= config.early_stop_patience {
                break;
            }
        }
    }
    let model = best.map_or(model, |(_, m)| m);
    Ok((model, log))
}
