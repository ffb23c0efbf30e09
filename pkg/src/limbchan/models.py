"""Stage 1 imputer, stage 2 classifier, the composed predictor and the
baseline ResNet."""
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatch
from .layers import BatchNorm1d, Conv1d, Dense, GRUStack, Module, ResidualBlock, attention
from .preprocess import ChannelConfig

N_LEADS = 12


@dataclass
class ImputerConfig:
    leads: tuple = ("II", "III", "aVF")
    hidden: int = 64
    encoder_layers: int = 3
    decoder_layers: int = 2
    latent_mode: str = "concat_all"
    attention: bool = False
    freeze_bias: bool = False
    n_out: int = N_LEADS

    @property
    def gru_layers(self):
        return self.encoder_layers + self.decoder_layers


@dataclass
class Latent:
    """Encoder output: the fixed-length vector plus the full state sequence."""

    vector: ad.Tensor
    sequence: ad.Tensor
    mode: str


class ImputerModel(Module):
    """GRU encoder-decoder mapping a (batch, T, K_hat) view to (batch, T, 12)."""

    def __init__(self, config=None, rng=None):
        self.config = config or ImputerConfig()
        cfg = self.config
        if cfg.latent_mode not in ("last_step", "concat_all"):
            raise ValueError(f"unknown latent mode {cfg.latent_mode!r}")
        self.channel_config = ChannelConfig.resolve(cfg.leads)
        self.encoder = GRUStack(len(cfg.leads), cfg.hidden, cfg.encoder_layers, rng, cfg.freeze_bias)
        self.decoder = GRUStack(cfg.hidden, cfg.hidden, cfg.decoder_layers, rng, cfg.freeze_bias)
        self.head = Dense(cfg.hidden, cfg.n_out, rng)

    @property
    def n_gru_layers(self):
        return self.encoder.n_layers + self.decoder.n_layers

    def _batched(self, x):
        x = ad.as_tensor(x)
        if x.ndim == 2:
            return ad.reshape(x, (1,) + x.shape), True
        return x, False

    def encode(self, x_hat):
        x, _ = self._batched(x_hat)
        if x.shape[2] != len(self.channel_config):
            raise ShapeMismatch(f"imputer expects {len(self.channel_config)} channels, got {x.shape[2]}")
        seq, finals = self.encoder(x)
        B, T, H = seq.shape
        if self.config.latent_mode == "last_step":
            vec = finals[-1]
        else:
            vec = ad.reshape(seq, (B, T * H))
        return Latent(vec, seq, self.config.latent_mode)

    def decode(self, latent, steps):
        seq = latent.sequence
        B, T_enc, H = seq.shape
        if self.config.attention:
            out = self._decode_attention(seq, steps)
        else:
            if latent.mode == "last_step":
                inp = ad.mul(np.ones((B, steps, 1)), ad.reshape(latent.vector, (B, 1, H)))
            else:
                if steps != T_enc:
                    raise ShapeMismatch(f"concat_all latent covers {T_enc} steps, asked for {steps}")
                inp = ad.reshape(latent.vector, (B, T_enc, H))
            out, _ = self.decoder(inp)
        return self.head(out)

    def _decode_attention(self, enc_seq, steps):
        B, _, H = enc_seq.shape
        states = [ad.Tensor(np.zeros((B, H))) for _ in range(self.decoder.n_layers)]
        query = states[-1]
        outs = []
        for _ in range(steps):
            context, _ = attention(query, enc_seq)
            query, states = self.decoder.step(context, states)
            outs.append(query)
        return ad.stack(outs, axis=1)

    def impute(self, x_hat):
        x, unbatched = self._batched(x_hat)
        y = self.decode(self.encode(x), x.shape[1])
        return ad.reshape(y, y.shape[1:]) if unbatched else y

    def __call__(self, x_hat):
        return self.impute(x_hat)


@dataclass
class ClassifierConfig:
    in_channels: int = N_LEADS
    stem_width: int = 32
    blocks: tuple = ((32, 1), (32, 1), (32, 1))
    kernel_size: int = 16
    dropout: float = 0.2
    n_classes: int = 2

    @property
    def conv_layers(self):
        count, c = 1, self.stem_width
        for c_out, stride in self.blocks:
            count += 2 + (1 if (c != c_out or stride > 1) else 0)
            c = c_out
        return count


def stage2_config(in_channels=N_LEADS, **overrides):
    """Seven convolutions: stem plus three identity-skip residual blocks."""
    kw = dict(in_channels=in_channels)
    kw.update(overrides)
    return ClassifierConfig(**kw)


def baseline_config(in_channels=3, **overrides):
    """Thirteen convolutions: stem, five residual blocks, two projections."""
    kw = dict(
        in_channels=in_channels,
        stem_width=32,
        blocks=((32, 1), (64, 2), (64, 1), (128, 2), (128, 1)),
    )
    kw.update(overrides)
    return ClassifierConfig(**kw)


class ClassifierModel(Module):
    """1-D ResNet: stem conv-BN-ReLU, residual blocks, global average pool, dense head."""

    def __init__(self, config=None, rng=None):
        self.config = config or stage2_config()
        cfg = self.config
        self.stem = Conv1d(cfg.in_channels, cfg.stem_width, cfg.kernel_size, 1, rng)
        self.stem_bn = BatchNorm1d(cfg.stem_width)
        self.blocks = []
        c = cfg.stem_width
        for c_out, stride in cfg.blocks:
            self.blocks.append(ResidualBlock(c, c_out, cfg.kernel_size, stride, cfg.dropout, rng))
            c = c_out
        self.head = Dense(c, cfg.n_classes, rng)

    def conv_layers(self):
        convs = [self.stem]
        for b in self.blocks:
            convs += [b.conv1, b.conv2]
            if b.projection is not None:
                convs.append(b.projection)
        return convs

    def logits(self, x):
        x = ad.as_tensor(x)
        if x.ndim == 2:
            x = ad.reshape(x, (1,) + x.shape)
        if x.ndim != 3 or x.shape[2] != self.config.in_channels:
            raise ShapeMismatch(f"classifier expects {self.config.in_channels} channels, got {x.shape}")
        y = ad.relu(self.stem_bn(self.stem(x)))
        for block in self.blocks:
            y = block(y)
        return self.head(ad.mean(y, axis=1))

    def classify(self, x):
        """Class probabilities (healthy, abnormal)."""
        x = ad.as_tensor(x)
        p = ad.softmax(self.logits(x), axis=-1)
        return p.value if x.ndim == 3 else p.value[0]

    __call__ = logits


@dataclass
class ResNetPlusPlus:
    imputer: ImputerModel
    classifier: ClassifierModel
    input_mode: str = "imputed_signal"
    frozen: bool = field(default=True)

    def __post_init__(self):
        if self.input_mode not in ("imputed_signal", "latent_sequence"):
            raise ValueError(f"unknown classifier input mode {self.input_mode!r}")

    def features(self, x_hat):
        """Stage 1 output consumed by stage 2."""
        if self.input_mode == "imputed_signal":
            return self.imputer.impute(x_hat)
        x, unbatched = self.imputer._batched(x_hat)
        seq = self.imputer.encode(x).sequence
        return ad.reshape(seq, seq.shape[1:]) if unbatched else seq

    def eval(self):
        self.imputer.eval()
        self.classifier.eval()
        return self

    def predict(self, x_hat):
        with ad.no_grad():
            return self.classifier.classify(self.features(x_hat))


def resnetpp_predict(model, x_hat):
    return model.predict(x_hat)


def baseline_resnet_predict(model, x_hat):
    with ad.no_grad():
        return model.classify(x_hat)
