use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::loss::{explicit_loss, implicit_loss, LossBreakdown, Targets};
use super::network::{DualPoseNet, Prepared};
use crate::error::{Error, Result};
use crate::nn::{AdamState, Graph, ParamStore, Tensor, Var};
use crate::synthdata::Sample;

/// A sample converted once for repeated training use.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub index: usize,
    pub prepared: Prepared,
    pub targets: Targets,
}

pub fn prepare_items(net: &DualPoseNet, samples: &[Sample]) -> Result<Vec<TrainItem>> {
    samples
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let prepared = net.prepare(&s.crop)?;
            let targets = Targets::new(&prepared, &s.annotation.pose, &s.annotation.symmetry)?;
            Ok(TrainItem {
                index,
                prepared,
                targets,
            })
        })
        .collect()
}

/// Graph of the batch-mean loss `L_exp + λ·L_im`; returns the total node.
pub fn batch_loss(
    net: &DualPoseNet,
    params: &ParamStore,
    batch: &[&TrainItem],
    lambda: f64,
) -> Result<(Graph, Var, LossBreakdown)> {
    if batch.is_empty() {
        return Err(Error::TrainingFault {
            batch: Vec::new(),
            reason: "empty batch".into(),
        });
    }
    let mut g = Graph::new();
    let pv = net.bind(&mut g, params)?;
    let mut exp_terms = Vec::with_capacity(batch.len());
    let mut im_terms = Vec::with_capacity(batch.len());
    for item in batch {
        let (f, _) = net.encode(&mut g, &pv, &item.prepared)?;
        let heads = net.explicit(&mut g, &pv, f)?;
        let points = g.input(item.prepared.normalized.clone())?;
        let q = net.implicit(&mut g, &pv, f, points)?;
        exp_terms.push(explicit_loss(&mut g, &heads, &item.targets)?);
        im_terms.push(implicit_loss(&mut g, q, &item.targets)?);
    }
    let sum = |g: &mut Graph, terms: &[Var]| -> Result<Var> {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = g.add(acc, t)?;
        }
        g.scale(acc, 1.0 / terms.len() as f64)
    };
    let l_exp = sum(&mut g, &exp_terms)?;
    let l_im = sum(&mut g, &im_terms)?;
    let weighted = g.scale(l_im, lambda)?;
    let total = g.add(l_exp, weighted)?;
    let breakdown = LossBreakdown::new(g.value(l_exp).item(), g.value(l_im).item(), lambda);
    Ok((g, total, breakdown))
}

/// ADAM training over both decoders and the encoder.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: DualPoseNet,
    pub cfg: TrainConfig,
    adam: AdamState,
    iteration: usize,
}

impl Trainer {
    pub fn new(net: DualPoseNet, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(net.params());
        Ok(Trainer {
            net,
            cfg,
            adam,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// One ADAM step on the batch-mean total loss.
    pub fn train_step(&mut self, batch: &[&TrainItem]) -> Result<LossBreakdown> {
        let ids: Vec<usize> = batch.iter().map(|b| b.index).collect();
        let fault = |e: Error| match e {
            Error::NonFinite { .. } | Error::DegenerateInput(_) => Error::TrainingFault {
                batch: ids.clone(),
                reason: e.to_string(),
            },
            other => other,
        };
        let (g, total, breakdown) =
            batch_loss(&self.net, self.net.params(), batch, self.cfg.lambda).map_err(fault)?;
        let grads = g.backward(total)?.param_grads(self.net.params());
        let lr = self.cfg.lr_at(self.iteration);
        self.adam.step(self.net.params_mut(), &grads, lr, None)?;
        self.iteration += 1;
        Ok(breakdown)
    }

    /// Runs `cfg.iterations` steps over shuffled epochs of `items`.
    pub fn fit(
        &mut self,
        items: &[TrainItem],
        seed: u64,
        mut log: impl FnMut(usize, &LossBreakdown),
    ) -> Result<()> {
        if items.is_empty() {
            return Err(Error::Config("no training samples".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = Vec::new();
        while self.iteration < self.cfg.iterations {
            if order.len() < self.cfg.batch_size.min(items.len()) {
                let mut epoch: Vec<usize> = (0..items.len()).collect();
                epoch.shuffle(&mut rng);
                order.extend(epoch);
            }
            let take = self.cfg.batch_size.min(items.len());
            let batch: Vec<&TrainItem> = order.drain(..take).map(|i| &items[i]).collect();
            let it = self.iteration;
            let loss = self.train_step(&batch)?;
            log(it, &loss);
        }
        Ok(())
    }
}

/// Gradient of the batch loss per parameter, zero where unreached.
pub fn loss_gradients(
    net: &DualPoseNet,
    params: &ParamStore,
    batch: &[&TrainItem],
    lambda: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let (g, total, _) = batch_loss(net, params, batch, lambda)?;
    let grads = g.backward(total)?.param_grads(params);
    let value = g.value(total).item();
    Ok((
        value,
        grads
            .into_iter()
            .zip(params.ids())
            .map(|(gr, id)| gr.unwrap_or_else(|| Tensor::zeros(params.get(id).shape())))
            .collect(),
    ))
}
