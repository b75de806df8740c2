use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerState, Mode, Module};
use crate::{Error, Result, Tensor};

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout. Returns the output and, in train mode, the scaling mask
/// (0 or `1/(1-rate)` per element).
pub fn dropout<R: Rng + ?Sized>(input: &Tensor, rate: f64, rng: &mut R, mode: Mode) -> Result<(Tensor, Option<Vec<f64>>)> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..input.len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let out = input.values().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((Tensor::new(input.shape().to_vec(), out)?, Some(mask)))
}

#[derive(Clone, Debug)]
pub struct Dropout {
    pub rate: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<f64>>,
    frozen: bool,
    state: LayerState,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
            frozen: false,
            state: LayerState::default(),
        })
    }
}

impl Module for Dropout {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        if self.frozen && self.state.mode == Mode::Train {
            if let Some(mask) = self.mask.as_ref().filter(|m| m.len() == input.len()) {
                let out = input.values().iter().zip(mask).map(|(x, m)| x * m).collect();
                return Tensor::new(input.shape().to_vec(), out);
            }
        }
        let (out, mask) = dropout(input, self.rate, &mut self.rng, self.state.mode)?;
        self.mask = mask;
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        match &self.mask {
            None => Ok(grad_output.clone()),
            Some(mask) => {
                if mask.len() != grad_output.len() {
                    return Err(Error::dim("grad_output", "dropout mask length mismatch"));
                }
                let dx = grad_output.values().iter().zip(mask).map(|(g, m)| g * m).collect();
                Tensor::new(grad_output.shape().to_vec(), dx)
            }
        }
    }

    fn states(&self) -> Vec<&LayerState> {
        vec![&self.state]
    }

    fn states_mut(&mut self) -> Vec<&mut LayerState> {
        vec![&mut self.state]
    }

    fn set_mode(&mut self, mode: Mode) {
        self.state.mode = mode;
        if mode == Mode::Eval {
            self.mask = None;
        }
    }

    fn freeze_dropout(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    fn cached_len(&self) -> usize {
        self.mask.as_ref().map_or(0, Vec::len)
    }

    fn clear_cache(&mut self) {
        self.mask = None;
    }
}
