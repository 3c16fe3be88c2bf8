use crate::blocks::layers::{down_conv, Conv, UpConv};
use crate::blocks::FuseSsmBlock;
use crate::error::{Error, Result};
use crate::network::config::{ModelConfig, StageShape};
use crate::numerics::ops::add;
use crate::numerics::{shape_str, FeatureMap, ParamBuilder, ParamSpec, ParamStore, Tape, Var};

#[derive(Clone, Debug)]
struct EncoderStage {
    blocks: Vec<FuseSsmBlock>,
    down: Option<Conv>,
}

#[derive(Clone, Debug)]
struct DecoderStage {
    up: Option<UpConv>,
    blocks: Vec<FuseSsmBlock>,
}

#[derive(Clone, Debug)]
struct Architecture {
    embed: Conv,
    /// Stage 1 first.
    encoder: Vec<EncoderStage>,
    /// Deepest stage first.
    decoder: Vec<DecoderStage>,
    output: Conv,
}

impl Architecture {
    fn register(b: &mut ParamBuilder, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let k_max = cfg.stages;
        let embed = Conv::same(b, "embed", 1, cfg.base_width, 3);
        let mut encoder = Vec::with_capacity(k_max);
        for k in 1..=k_max {
            let width = cfg.enc_widths[k - 1];
            let blocks = (0..cfg.enc_blocks[k - 1])
                .map(|i| FuseSsmBlock::register(b, &format!("enc{k}.block{i}"), cfg.block_config(width)))
                .collect::<Result<_>>()?;
            let down = (k < k_max).then(|| down_conv(b, &format!("enc{k}.down"), width, cfg.enc_widths[k]));
            encoder.push(EncoderStage { blocks, down });
        }
        let mut decoder = Vec::with_capacity(k_max);
        for k in (1..=k_max).rev() {
            let width = cfg.dec_width(k);
            let up = (k > 1).then(|| {
                let from = if k == k_max { cfg.enc_widths[k_max - 1] } else { cfg.dec_width(k + 1) };
                UpConv::register(b, &format!("dec{k}.up"), from, width)
            });
            let blocks = (0..cfg.dec_block_count(k))
                .map(|i| FuseSsmBlock::register(b, &format!("dec{k}.block{i}"), cfg.block_config(width)))
                .collect::<Result<_>>()?;
            decoder.push(DecoderStage { up, blocks });
        }
        let output = Conv::same(b, "output", cfg.dec_width(1), 1, 3);
        Ok(Architecture {
            embed,
            encoder,
            decoder,
            output,
        })
    }
}

/// The hourglass denoiser: embedding, `K` encoder stages with stride-2
/// downsampling, `K` decoder stages with transposed-convolution upsampling and
/// additive skips, and a `3×3` output projection.
#[derive(Clone, Debug)]
pub struct DenoMambaModel {
    config: ModelConfig,
    arch: Architecture,
    pub store: ParamStore,
}

/// Records feature shapes while a forward pass runs.
type ShapeLog<'a> = Option<&'a mut Vec<StageShape>>;

fn log_shape(log: &mut ShapeLog<'_>, tape: &Tape, label: String, v: Var) {
    if let Some(log) = log.as_deref_mut() {
        let s = tape.shape(v);
        log.push(StageShape {
            label,
            channels: s[1],
            height: s[2],
            width: s[3],
        });
    }
}

impl DenoMambaModel {
    /// Builds the model with parameters initialised from `config.seed`.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        let mut b = ParamBuilder::new(config.seed);
        let arch = Architecture::register(&mut b, config)?;
        Ok(DenoMambaModel {
            config: config.clone(),
            arch,
            store: b.into_store(),
        })
    }

    /// Parameter names and shapes in enumeration order, without allocating.
    pub fn layout(config: &ModelConfig) -> Result<Vec<ParamSpec>> {
        let mut b = ParamBuilder::layout_only();
        Architecture::register(&mut b, config)?;
        Ok(b.into_layout())
    }

    /// Number of scalar learnables of a configuration.
    pub fn count_params(config: &ModelConfig) -> Result<usize> {
        Ok(Self::layout(config)?.iter().map(ParamSpec::numel).sum())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != 1 {
            return Err(Error::shape("denoiser input", "(B, 1, H, W)", shape_str(shape)));
        }
        self.config.check_extents(shape[2], shape[3])
    }

    /// `1 → C` input embedding.
    pub fn embed(&self, tape: &Tape, x: Var) -> Result<Var> {
        self.check_input(&tape.shape(x))?;
        self.arch.embed.forward(tape, &self.store, x)
    }

    /// Returns the bottleneck and the skips `[embedding, pre-down stage
    /// outputs of stages 1..K−1]`.
    pub fn encoder_forward(&self, tape: &Tape, embedded: Var) -> Result<(Var, Vec<Var>)> {
        self.encode(tape, embedded, &mut None)
    }

    fn encode(&self, tape: &Tape, embedded: Var, log: &mut ShapeLog<'_>) -> Result<(Var, Vec<Var>)> {
        let mut skips = vec![embedded];
        let mut h = embedded;
        for (i, stage) in self.arch.encoder.iter().enumerate() {
            for block in &stage.blocks {
                h = block.forward(tape, &self.store, h)?;
            }
            log_shape(log, tape, format!("enc{}", i + 1), h);
            if let Some(down) = &stage.down {
                let s = tape.shape(h);
                if !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
                    return Err(Error::shape("down", "even spatial extents", shape_str(&s)));
                }
                skips.push(h);
                h = down.forward(tape, &self.store, h)?;
                log_shape(log, tape, format!("enc{}.down", i + 1), h);
            }
        }
        Ok((h, skips))
    }

    /// Decoder features at full resolution with `C` channels.
    pub fn decoder_forward(&self, tape: &Tape, bottleneck: Var, skips: &[Var]) -> Result<Var> {
        self.decode(tape, bottleneck, skips, &mut None)
    }

    fn decode(&self, tape: &Tape, bottleneck: Var, skips: &[Var], log: &mut ShapeLog<'_>) -> Result<Var> {
        let k_max = self.config.stages;
        if skips.len() != k_max {
            return Err(Error::shape("decoder skips", format!("{k_max} skips"), format!("{}", skips.len())));
        }
        let mut h = bottleneck;
        for (stage, k) in self.arch.decoder.iter().zip((1..=k_max).rev()) {
            if let Some(up) = &stage.up {
                h = up.forward(tape, &self.store, h)?;
                log_shape(log, tape, format!("dec{k}.up"), h);
            }
            let skip = skips[k - 1];
            let (hs, ss) = (tape.shape(h), tape.shape(skip));
            if hs != ss {
                return Err(Error::shape("decoder skip", shape_str(&hs), shape_str(&ss)));
            }
            h = add(tape, h, skip)?;
            for block in &stage.blocks {
                h = block.forward(tape, &self.store, h)?;
            }
            log_shape(log, tape, format!("dec{k}"), h);
        }
        Ok(h)
    }

    /// `C → 1` output projection.
    pub fn project(&self, tape: &Tape, features: Var) -> Result<Var> {
        self.arch.output.forward(tape, &self.store, features)
    }

    /// Full differentiable forward pass on `(B, 1, H, W)` inputs.
    pub fn forward_taped(&self, tape: &Tape, x: Var) -> Result<Var> {
        self.run(tape, x, &mut None)
    }

    fn run(&self, tape: &Tape, x: Var, log: &mut ShapeLog<'_>) -> Result<Var> {
        let e = self.embed(tape, x)?;
        log_shape(log, tape, "embed".into(), e);
        let (bottleneck, skips) = self.encode(tape, e, log)?;
        let features = self.decode(tape, bottleneck, &skips, log)?;
        let y = self.project(tape, features)?;
        log_shape(log, tape, "output".into(), y);
        Ok(y)
    }

    /// Inference forward pass.
    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let y = self.forward_taped(&tape, xv)?;
        Ok((*tape.value(y)).clone())
    }

    /// Inference forward pass that also reports every stage's feature shape,
    /// labelled as in [`ModelConfig::shape_plan`].
    pub fn forward_traced(&self, x: &FeatureMap) -> Result<(FeatureMap, Vec<StageShape>)> {
        let tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let mut log = Vec::new();
        let y = self.run(&tape, xv, &mut Some(&mut log))?;
        Ok(((*tape.value(y)).clone(), log))
    }
}
