use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::{shuffled_batches, Adam, DenseNet, Gradients, NnError, TrainConfig};
use crate::scalar::{ordered_sum, Scalar};

/// Encoder plus a decoder with mirrored widths.
#[derive(Clone, Debug)]
pub struct Autoencoder<T> {
    pub encoder: DenseNet<T>,
    pub decoder: DenseNet<T>,
}

impl<T: Scalar> Autoencoder<T> {
    /// Attaches a freshly initialized decoder whose widths mirror the encoder.
    pub fn new<R: Rng + ?Sized>(encoder: DenseNet<T>, rng: &mut R) -> Result<Self, NnError> {
        let mut widths = encoder.widths();
        widths.reverse();
        let decoder = DenseNet::new(&widths, encoder.has_bias(), rng)?;
        Ok(Self { encoder, decoder })
    }

    pub fn reconstruct(&self, data: ArrayView2<'_, T>) -> Result<Array2<T>, NnError> {
        let code = self.encoder.predict(data)?;
        self.decoder.predict(code.view())
    }

    /// Mean over rows of the squared reconstruction error.
    pub fn loss(&self, data: ArrayView2<'_, T>) -> Result<T, NnError> {
        if data.nrows() == 0 {
            return Err(NnError::EmptyData);
        }
        let recon = self.reconstruct(data)?;
        Ok(mean_squared_rows(&recon, data))
    }

    /// Loss plus gradients for encoder and decoder parameters.
    pub fn loss_and_grad(&self, data: ArrayView2<'_, T>) -> Result<(T, Gradients<T>, Gradients<T>), NnError> {
        if data.nrows() == 0 {
            return Err(NnError::EmptyData);
        }
        let (code, enc_tape) = self.encoder.forward(data)?;
        let (recon, dec_tape) = self.decoder.forward(code.view())?;
        let loss = mean_squared_rows(&recon, data);
        let scale = T::lit(2.0) / T::from_usize(data.nrows()).unwrap();
        let grad_out = (&recon - &data) * scale;
        let dec = self.decoder.backward(&dec_tape, grad_out.view())?;
        let enc = self.encoder.backward(&enc_tape, dec.input.view())?;
        Ok((loss, enc.params, dec.params))
    }

    /// One pass over `data` in shuffled mini-batches; returns the mean batch loss.
    pub fn train_epoch<R: Rng + ?Sized>(
        &mut self,
        data: ArrayView2<'_, T>,
        batch_size: usize,
        enc_opt: &mut Adam<T>,
        dec_opt: &mut Adam<T>,
        rng: &mut R,
    ) -> Result<T, NnError> {
        let all: Vec<usize> = (0..data.nrows()).collect();
        let batches = shuffled_batches(&all, batch_size, rng);
        let mut losses = Vec::with_capacity(batches.len());
        for batch in &batches {
            let rows = data.select(Axis(0), batch);
            let (loss, g_enc, g_dec) = self.loss_and_grad(rows.view())?;
            enc_opt.step(&mut self.encoder, &g_enc)?;
            dec_opt.step(&mut self.decoder, &g_dec)?;
            losses.push(loss);
        }
        Ok(ordered_sum(losses.iter().copied()) / T::from_usize(losses.len()).unwrap())
    }
}

fn mean_squared_rows<T: Scalar>(recon: &Array2<T>, data: ArrayView2<'_, T>) -> T {
    let per_row = recon.rows().into_iter().zip(data.rows()).map(|(r, x)| {
        ordered_sum(r.iter().zip(x).map(|(&a, &b)| (a - b) * (a - b)))
    });
    ordered_sum(per_row) / T::from_usize(data.nrows()).unwrap()
}

/// Reconstruction loss of `encoder` under a given `decoder`.
pub fn reconstruction_loss<T: Scalar>(
    encoder: &DenseNet<T>,
    decoder: &DenseNet<T>,
    data: ArrayView2<'_, T>,
) -> Result<T, NnError> {
    let ae = Autoencoder {
        encoder: encoder.clone(),
        decoder: decoder.clone(),
    };
    ae.loss(data)
}

/// Trains `encoder` as the front half of a mirrored autoencoder and returns
/// it with the per-epoch mean loss. The decoder is discarded.
pub fn pretrain_autoencoder<T: Scalar, R: Rng + ?Sized>(
    encoder: DenseNet<T>,
    data: ArrayView2<'_, T>,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(DenseNet<T>, Vec<T>), NnError> {
    if data.nrows() == 0 {
        return Err(NnError::EmptyData);
    }
    let mut ae = Autoencoder::new(encoder, rng)?;
    let mut enc_opt = Adam::new(&ae.encoder, config.adam);
    let mut dec_opt = Adam::new(&ae.decoder, config.adam);
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        trace.push(ae.train_epoch(data, config.batch_size, &mut enc_opt, &mut dec_opt, rng)?);
    }
    Ok((ae.encoder, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use crate::nn::AdamConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 32,
            adam: AdamConfig::default(),
        }
    }

    #[test]
    fn one_epoch_does_not_increase_loss() {
        let ds = generate_synthetic::<f64>(200, 4, 0.05, 3).unwrap();
        let x = ds.features();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enc = DenseNet::new(&[4, 8, 3], false, &mut rng).unwrap();
        let mut ae = Autoencoder::new(enc, &mut rng).unwrap();
        let before = ae.loss(x).unwrap();
        let mut eo = Adam::new(&ae.encoder, AdamConfig::default());
        let mut doo = Adam::new(&ae.decoder, AdamConfig::default());
        ae.train_epoch(x, 32, &mut eo, &mut doo, &mut rng).unwrap();
        assert!(ae.loss(x).unwrap() <= before);
    }

    #[test]
    fn pretraining_is_deterministic() {
        let ds = generate_synthetic::<f64>(100, 3, 0.05, 1).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let enc = DenseNet::new(&[3, 6, 2], false, &mut rng).unwrap();
            pretrain_autoencoder(enc, ds.features(), &cfg(3), &mut rng).unwrap()
        };
        let (a, ta) = run();
        let (b, tb) = run();
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(a.parameters()), bits(b.parameters()));
        assert_eq!(bits(ta), bits(tb));
    }

    #[test]
    fn zero_data_reconstructs_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let enc = DenseNet::<f64>::new(&[3, 5, 2], false, &mut rng).unwrap();
        let ae = Autoencoder::new(enc, &mut rng).unwrap();
        assert_eq!(ae.loss(Array2::zeros((7, 3)).view()).unwrap(), 0.0);
        assert!(matches!(ae.loss(Array2::zeros((0, 3)).view()), Err(NnError::EmptyData)));
    }
}
