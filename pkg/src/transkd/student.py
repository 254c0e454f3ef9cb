"""The trainable student transducer and the per-teacher projection heads.

The model follows the usual encoder / predictor / joint split:

* frontend (optional): concatenates frame pairs, linear map, tanh;
* encoder: stacked windowed linear-mixing layers with context
  (context_past, context_future) plus a final linear projection to the
  embedding dimension.  A streaming model has zero future context in every
  layer, so frame t never sees later input;
* predictor: a single gated recurrent cell over the label history with a
  learned initial state;
* joint: projected sum of the two embeddings, tanh, then vocabulary logits
  normalized per node with log-softmax.

All forward passes run on the autograd engine; decoding uses the same
formulas through constant (gradient-free) tensors, so there is exactly one
implementation of each sub-network.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autograd import Tensor, concat, log_softmax
from .errors import ShapeMismatchError
from .kd_losses import EmbeddingSequence
from .lattice import DistributionLattice, LabelSequence

__all__ = ["ModelConfig", "StudentModel", "LossNet"]


@dataclass(frozen=True)
class ModelConfig:
    d_in: int
    vocab: int
    use_frontend: bool = True
    frontend_dim: int = 8
    encoder_layers: int = 1
    encoder_hidden: int = 8
    context_past: int = 1
    context_future: int = 0
    d_model: int = 8
    predictor_dim: int = 8
    joint_dim: int = 8
    streaming: bool = False

    def __post_init__(self):
        if self.vocab < 2:
            raise ValueError("vocabulary must hold the blank plus at least one label")
        if min(self.d_in, self.frontend_dim, self.encoder_hidden, self.d_model,
               self.predictor_dim, self.joint_dim) < 1:
            raise ValueError("all model dimensions must be >= 1")
        if self.encoder_layers < 1 or self.context_past < 0 or self.context_future < 0:
            raise ValueError("bad encoder depth or context window")
        if self.streaming and self.context_future != 0:
            raise ValueError("a streaming model must have zero future context in every layer")

    def to_dict(self) -> dict:
        return asdict(self)


class StudentModel:
    """A small transducer with exact analytic gradients for every parameter."""

    def __init__(self, config: ModelConfig, seed: int = 0, params: dict[str, np.ndarray] | None = None):
        self.config = config
        if params is None:
            params = _init_params(config, np.random.default_rng(seed))
        self.params: dict[str, Tensor] = {
            name: Tensor(np.array(value, dtype=np.float64), requires_grad=True)
            for name, value in params.items()
        }

    # -- parameter plumbing ---------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    @property
    def num_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, value in arrays.items():
            if name not in self.params:
                raise ShapeMismatchError(f"unknown parameter {name!r}")
            if self.params[name].data.shape != value.shape:
                raise ShapeMismatchError(f"parameter {name!r} has shape {self.params[name].data.shape}, "
                                         f"checkpoint has {value.shape}")
            self.params[name].data = np.array(value, dtype=np.float64)

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def _c(self, name: str) -> Tensor:
        # constant view for gradient-free paths (decoding, frozen teachers)
        return Tensor(self.params[name].data)

    # -- frontend / encoder ----------------------------------------------------

    def subsample_graph(self, features: Tensor, p=None) -> Tensor:
        p = p or self._p
        M = features.data.shape[0]
        if M < 2:
            raise ShapeMismatchError(f"subsampling needs at least 2 frames, got {M}")
        T = M // 2  # odd trailing frame dropped
        pairs = concat([features[0 : 2 * T : 2, :], features[1 : 2 * T : 2, :]], axis=1)
        return (pairs @ p("frontend.w") + p("frontend.b")).tanh()

    def subsample(self, features: np.ndarray) -> np.ndarray:
        out = self.subsample_graph(Tensor(np.asarray(features, dtype=np.float64)), p=self._c)
        return out.data

    def _encoder_layer(self, x: Tensor, layer: int, p) -> Tensor:
        cfg = self.config
        T, d = x.data.shape
        cp, cf = cfg.context_past, cfg.context_future
        if cp or cf:
            x = concat(
                [Tensor(np.zeros((cp, d)))] * (1 if cp else 0)
                + [x]
                + [Tensor(np.zeros((cf, d)))] * (1 if cf else 0),
                axis=0,
            )
        out = None
        for j in range(cp + cf + 1):
            term = x[j : j + T, :] @ p(f"enc{layer}.w{j}")
            out = term if out is None else out + term
        return (out + p(f"enc{layer}.b")).tanh()

    def encode_graph(self, features: np.ndarray, p=None) -> Tensor:
        p = p or self._p
        x = Tensor(np.asarray(features, dtype=np.float64))
        if self.config.use_frontend:
            x = self.subsample_graph(x, p)
        for layer in range(self.config.encoder_layers):
            x = self._encoder_layer(x, layer, p)
        return x @ p("proj.w") + p("proj.b")

    def encode(self, features: np.ndarray) -> EmbeddingSequence:
        return EmbeddingSequence(self.encode_graph(features, p=self._c).data)

    # -- predictor ----------------------------------------------------------------

    def _gru_step(self, h: Tensor, x: Tensor, p) -> Tensor:
        z = (x @ p("pred.wz") + h @ p("pred.uz") + p("pred.bz")).sigmoid()
        r = (x @ p("pred.wr") + h @ p("pred.ur") + p("pred.br")).sigmoid()
        cand = (x @ p("pred.wh") + (r * h) @ p("pred.uh") + p("pred.bh")).tanh()
        return (1.0 - z) * h + z * cand

    def predictor_graph(self, y: LabelSequence, p=None) -> Tensor:
        """Text embeddings g_0 .. g_U; g_0 comes from the learned initial state."""
        p = p or self._p
        y.validate_vocab(self.config.vocab)
        h = p("pred.h0").reshape(1, self.config.predictor_dim)
        outputs = [h]
        for tok in y.tokens:
            x = p("pred.embed")[tok : tok + 1, :]
            h = self._gru_step(h, x, p)
            outputs.append(h)
        return concat(outputs, axis=0)

    # -- joint -----------------------------------------------------------------------

    def _joint_log_probs_grid(self, f: Tensor, g: Tensor, p) -> Tensor:
        """(T, U+1, V) log distributions from encoder rows f and predictor rows g."""
        cfg = self.config
        T = f.data.shape[0]
        U1 = g.data.shape[0]
        a = (f @ p("joint.wf")).reshape(T, 1, cfg.joint_dim)
        b = (g @ p("joint.wg")).reshape(1, U1, cfg.joint_dim)
        mixed = (a + b + p("joint.b")).tanh().reshape(T * U1, cfg.joint_dim)
        logits = mixed @ p("joint.wo") + p("joint.bo")
        return log_softmax(logits, axis=-1).reshape(T, U1, cfg.vocab)

    def joint_lattice_graph(self, encoder_out: Tensor, y: LabelSequence, p=None) -> Tensor:
        p = p or self._p
        g = self.predictor_graph(y, p)
        return self._joint_log_probs_grid(encoder_out, g, p)

    def joint_lattice(self, encoder_out: EmbeddingSequence, y: LabelSequence) -> DistributionLattice:
        logz = self.joint_lattice_graph(Tensor(encoder_out.frames), y, p=self._c)
        return DistributionLattice(logz.data)

    def lattice_for(self, features: np.ndarray, y: LabelSequence) -> DistributionLattice:
        return self.joint_lattice(self.encode(features), y)

    # -- decoding interface (gradient-free) ---------------------------------------------

    def decode_start(self) -> np.ndarray:
        return self.params["pred.h0"].data.reshape(1, -1)

    def decode_step(self, state: np.ndarray, token: int) -> np.ndarray:
        x = self._c("pred.embed")[token : token + 1, :]
        return self._gru_step(Tensor(state), x, self._c).data

    def joint_log_probs(self, frame: np.ndarray, state: np.ndarray) -> np.ndarray:
        f = Tensor(frame.reshape(1, -1))
        g = Tensor(state)
        return self._joint_log_probs_grid(f, g, self._c).data[0, 0]


def _init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform +-1/sqrt(fan_in) initialization, in a fixed parameter order."""
    params: dict[str, np.ndarray] = {}

    def uniform(name: str, shape: tuple, fan_in: int) -> None:
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)

    d = cfg.d_in
    if cfg.use_frontend:
        uniform("frontend.w", (2 * cfg.d_in, cfg.frontend_dim), 2 * cfg.d_in)
        uniform("frontend.b", (cfg.frontend_dim,), 2 * cfg.d_in)
        d = cfg.frontend_dim
    for layer in range(cfg.encoder_layers):
        width = cfg.context_past + cfg.context_future + 1
        for j in range(width):
            uniform(f"enc{layer}.w{j}", (d, cfg.encoder_hidden), d * width)
        uniform(f"enc{layer}.b", (cfg.encoder_hidden,), d * width)
        d = cfg.encoder_hidden
    uniform("proj.w", (d, cfg.d_model), d)
    uniform("proj.b", (cfg.d_model,), d)

    pd = cfg.predictor_dim
    uniform("pred.embed", (cfg.vocab, pd), pd)
    uniform("pred.h0", (pd,), pd)
    for gate in ("z", "r", "h"):
        uniform(f"pred.w{gate}", (pd, pd), pd)
        uniform(f"pred.u{gate}", (pd, pd), pd)
        uniform(f"pred.b{gate}", (pd,), pd)

    uniform("joint.wf", (cfg.d_model, cfg.joint_dim), cfg.d_model)
    uniform("joint.wg", (pd, cfg.joint_dim), pd)
    uniform("joint.b", (cfg.joint_dim,), cfg.d_model + pd)
    uniform("joint.wo", (cfg.joint_dim, cfg.vocab), cfg.joint_dim)
    uniform("joint.bo", (cfg.vocab,), cfg.joint_dim)
    return params


class LossNet:
    """Per-teacher linear map from the student embedding space to a teacher's."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None = None,
                 weight: np.ndarray | None = None, bias: np.ndarray | None = None):
        if weight is None:
            rng = rng or np.random.default_rng(0)
            bound = 1.0 / np.sqrt(d_in)
            weight = rng.uniform(-bound, bound, size=(d_in, d_out))
            bias = np.zeros(d_out)
        self.weight = Tensor(np.array(weight, dtype=np.float64), requires_grad=True)
        self.bias = Tensor(np.array(bias, dtype=np.float64), requires_grad=True)

    @property
    def d_in(self) -> int:
        return self.weight.data.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.data.shape[1]

    @classmethod
    def identity(cls, d: int) -> "LossNet":
        return cls(d, d, weight=np.eye(d), bias=np.zeros(d))

    def apply_graph(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def apply(self, emb: EmbeddingSequence) -> EmbeddingSequence:
        return EmbeddingSequence(emb.frames @ self.weight.data + self.bias.data)

    def parameters(self) -> dict[str, Tensor]:
        return {"w": self.weight, "b": self.bias}

    def zero_grads(self) -> None:
        self.weight.grad = None
        self.bias.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"w": self.weight.data.copy(), "b": self.bias.data.copy()}
