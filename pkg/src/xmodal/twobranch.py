"""Shallow two-branch projection network with hand-written backprop.

Each branch computes ``x -> l2norm(W2 @ relu(W1 @ x + b1) + b2)``; the face
and voice branches share only the output dimension, which is the joint space.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, NumericError, ShapeError

NORM_EPS = 1e-12
CHECKPOINT_MAGIC = "XMODAL-MODEL v1"


@dataclass
class BranchParams:
    W1: np.ndarray  # (hidden, in)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (out, hidden)
    b2: np.ndarray  # (out,)

    def __post_init__(self):
        h, d = self.W1.shape
        o, h2 = self.W2.shape
        if self.b1.shape != (h,) or h2 != h or self.b2.shape != (o,):
            raise ShapeError(
                f"inconsistent branch shapes W1{self.W1.shape} b1{self.b1.shape} "
                f"W2{self.W2.shape} b2{self.b2.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[0]

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.W1, self.b1, self.W2, self.b2)

    def copy(self) -> "BranchParams":
        return BranchParams(*(a.copy() for a in self.arrays()))

    def zeros_like(self) -> "BranchParams":
        return BranchParams(*(np.zeros_like(a) for a in self.arrays()))


@dataclass
class TwoBranchModel:
    face: BranchParams
    voice: BranchParams

    def __post_init__(self):
        if self.face.out_dim != self.voice.out_dim:
            raise ShapeError("face and voice branches must share the output dimension")
        if self.face.hidden_dim != self.voice.hidden_dim:
            raise ShapeError("face and voice branches must share the hidden dimension")

    @property
    def face_in_dim(self) -> int:
        return self.face.in_dim

    @property
    def voice_in_dim(self) -> int:
        return self.voice.in_dim

    @property
    def hidden_dim(self) -> int:
        return self.face.hidden_dim

    @property
    def out_dim(self) -> int:
        return self.face.out_dim

    def branch(self, modality: str) -> BranchParams:
        if modality == "face":
            return self.face
        if modality == "voice":
            return self.voice
        raise ValueError(f"unknown modality {modality!r}")

    def project(self, modality: str, inputs: np.ndarray) -> np.ndarray:
        return branch_forward(self.branch(modality), inputs)[0]

    def copy(self) -> "TwoBranchModel":
        return TwoBranchModel(self.face.copy(), self.voice.copy())


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre_relu: np.ndarray
    hidden: np.ndarray
    pre_norm: np.ndarray
    norms: np.ndarray
    outputs: np.ndarray

    @property
    def degenerate(self) -> np.ndarray:
        """Mask of samples whose pre-normalization output collapsed to zero."""
        return self.norms <= NORM_EPS


def _uniform_layer(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_model(
    face_in_dim: int,
    voice_in_dim: int,
    hidden_dim: int = 1024,
    out_dim: int = 256,
    seed: int = 0,
) -> TwoBranchModel:
    """Uniform +-1/sqrt(fan_in) weights, zero biases; deterministic in ``seed``."""
    for name, value in (
        ("face_in_dim", face_in_dim),
        ("voice_in_dim", voice_in_dim),
        ("hidden_dim", hidden_dim),
        ("out_dim", out_dim),
    ):
        if int(value) != value or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")
    rng = np.random.default_rng(seed)
    branches = []
    for in_dim in (face_in_dim, voice_in_dim):
        W1 = _uniform_layer(rng, hidden_dim, in_dim)
        W2 = _uniform_layer(rng, out_dim, hidden_dim)
        branches.append(BranchParams(W1, np.zeros(hidden_dim), W2, np.zeros(out_dim)))
    return TwoBranchModel(*branches)


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm; vectors with norm <= 1e-12 map to zero."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n <= NORM_EPS:
        return np.zeros_like(v)
    return v / n


def branch_forward(p: BranchParams, inputs) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.in_dim:
        raise ShapeError(f"expected inputs of shape (n, {p.in_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite branch input")
    z1 = x @ p.W1.T + p.b1
    h = np.maximum(z1, 0.0)
    z2 = h @ p.W2.T + p.b2
    norms = np.sqrt(np.einsum("ij,ij->i", z2, z2))
    ok = norms > NORM_EPS
    out = np.zeros_like(z2)
    out[ok] = z2[ok] / norms[ok, None]
    return out, ForwardCache(x, z1, h, z2, norms, out)


def branch_backward(
    p: BranchParams, cache: ForwardCache, grad_outputs
) -> tuple[BranchParams, np.ndarray]:
    """Backpropagate ``grad_outputs`` (d loss / d outputs) through one branch.

    Returns parameter gradients (summed over the batch) and input gradients.
    The ReLU subgradient at zero is zero and degenerate samples pass no gradient.
    """
    g = np.asarray(grad_outputs, dtype=np.float64)
    if g.shape != cache.outputs.shape:
        raise ShapeError(f"grad_outputs shape {g.shape} != outputs shape {cache.outputs.shape}")
    u = cache.outputs
    ok = ~cache.degenerate
    gz2 = np.zeros_like(g)
    # (I - u u^T) g / ||z2||
    radial = np.einsum("ij,ij->i", u, g)
    gz2[ok] = (g[ok] - u[ok] * radial[ok, None]) / cache.norms[ok, None]
    gW2 = gz2.T @ cache.hidden
    gb2 = gz2.sum(axis=0)
    gz1 = (gz2 @ p.W2) * (cache.pre_relu > 0)
    gW1 = gz1.T @ cache.inputs
    gb1 = gz1.sum(axis=0)
    return BranchParams(gW1, gb1, gW2, gb2), gz1 @ p.W1


# -- checkpoints ---------------------------------------------------------------

_TENSORS = ("face.W1", "face.b1", "face.W2", "face.b2", "voice.W1", "voice.b1", "voice.W2", "voice.b2")


def _named_tensors(m: TwoBranchModel):
    for prefix, branch in (("face", m.face), ("voice", m.voice)):
        for suffix, arr in zip(("W1", "b1", "W2", "b2"), branch.arrays()):
            yield f"{prefix}.{suffix}", arr


def save_model(m: TwoBranchModel) -> str:
    """Serialize to the versioned text checkpoint format (17 significant digits)."""
    buf = io.StringIO()
    buf.write(CHECKPOINT_MAGIC + "\n")
    buf.write(f"dims {m.face_in_dim} {m.voice_in_dim} {m.hidden_dim} {m.out_dim}\n")
    for name, arr in _named_tensors(m):
        rows = arr if arr.ndim == 2 else arr[None, :]
        buf.write(f"tensor {name} {' '.join(map(str, arr.shape))}\n")
        for row in rows:
            buf.write(" ".join(format(float(x), ".17g") for x in row) + "\n")
    buf.write("end\n")
    return buf.getvalue()


def load_model(text: str) -> TwoBranchModel:
    lines = text.split("\n")
    pos = 0

    def take() -> str:
        nonlocal pos
        if pos >= len(lines) or (pos == len(lines) - 1 and lines[pos] == ""):
            raise CheckpointError("truncated checkpoint")
        line = lines[pos]
        pos += 1
        return line

    if take() != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a {CHECKPOINT_MAGIC} checkpoint")
    head = take().split()
    if len(head) != 5 or head[0] != "dims":
        raise CheckpointError("missing dims header")
    try:
        face_in, voice_in, hidden, out = (int(x) for x in head[1:])
    except ValueError:
        raise CheckpointError("non-integer dims") from None
    expected = {
        "face.W1": (hidden, face_in), "face.b1": (hidden,), "face.W2": (out, hidden), "face.b2": (out,),
        "voice.W1": (hidden, voice_in), "voice.b1": (hidden,), "voice.W2": (out, hidden), "voice.b2": (out,),
    }
    arrays = {}
    for name in _TENSORS:
        tag = take().split()
        if len(tag) < 3 or tag[0] != "tensor" or tag[1] != name:
            raise CheckpointError(f"expected tensor {name}")
        shape = tuple(int(x) for x in tag[2:])
        if shape != expected[name]:
            raise CheckpointError(f"tensor {name} has shape {shape}, dims imply {expected[name]}")
        n_rows, n_cols = (shape[0], shape[1]) if len(shape) == 2 else (1, shape[0])
        rows = []
        for _ in range(n_rows):
            fields = take().split()
            if len(fields) != n_cols:
                raise CheckpointError(f"tensor {name}: expected {n_cols} values, got {len(fields)}")
            try:
                rows.append([float(x) for x in fields])
            except ValueError:
                raise CheckpointError(f"tensor {name}: non-numeric value") from None
        arr = np.array(rows, dtype=np.float64).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"tensor {name}: non-finite value")
        arrays[name] = arr
    if take() != "end":
        raise CheckpointError("missing end marker")
    face = BranchParams(*(arrays[f"face.{k}"] for k in ("W1", "b1", "W2", "b2")))
    voice = BranchParams(*(arrays[f"voice.{k}"] for k in ("W1", "b1", "W2", "b2")))
    return TwoBranchModel(face, voice)
