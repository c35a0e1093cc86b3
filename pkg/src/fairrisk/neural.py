"""Small feed-forward networks with exact analytic gradients.

Everything is float64 numpy. Architectures are described by a
``NetworkSpec`` (layer sizes including input and output, plus layer-norm
and spectral-norm switches). Hidden layers apply affine -> optional
layer norm -> ReLU; the output layer is affine only, and losses apply
the sigmoid or softmax themselves.

Spectral normalization follows the power-iteration scheme with one
persistent left singular vector estimate ``u`` per layer. A forward
pass with ``update_u=True`` advances ``u`` by one power iteration and
then freezes it for the rest of the step; with ``update_u=False`` the
stored ``u`` is used as-is. In both cases the normalized weight is

    v = W^T u / ||W^T u||,  sigma = ||W^T u||,  W_bar = W / sigma

and the backward pass uses the exact derivative of that expression,
d sigma / dW = u v^T, so central finite differences match the analytic
gradients to first order in h^2 whenever ``update_u`` is off.

The probability clamp in both losses zeroes the gradient of any sample
whose clamped value is active, again keeping finite differences exact.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .errors import ContractError, NumericError, ValidationError

logger = logging.getLogger("fairrisk")

LN_EPS = 1e-5
PROB_CLAMP = 1e-7
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_CHECKPOINT_MAGIC = b"FRNET01\n"


@dataclass(frozen=True)
class NetworkSpec:
    """Layer sizes run input -> hidden... -> output."""

    layer_sizes: tuple[int, ...]
    layer_norm: bool = False
    spectral_norm: bool = False

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValidationError("layer_sizes: need at least input and output")
        if any(int(s) != s or s < 1 for s in self.layer_sizes):
            raise ValidationError("layer_sizes: sizes must be positive integers")
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "layer_norm": self.layer_norm,
            "spectral_norm": self.spectral_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            layer_sizes=tuple(d["layer_sizes"]),
            layer_norm=bool(d["layer_norm"]),
            spectral_norm=bool(d["spectral_norm"]),
        )

    @classmethod
    def of(
        cls,
        input_dim: int,
        hidden_layers: Sequence[int],
        output_dim: int,
        layer_norm: bool = False,
        spectral_norm: bool = False,
    ) -> "NetworkSpec":
        return cls(
            layer_sizes=(input_dim, *hidden_layers, output_dim),
            layer_norm=layer_norm,
            spectral_norm=spectral_norm,
        )


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    gamma: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None  # spectral-norm state, not trainable


@dataclass
class NetworkParams:
    spec: NetworkSpec
    layers: list[Layer] = field(default_factory=list)

    def trainable(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order (u is state, not trained)."""
        arrays: list[np.ndarray] = []
        for layer in self.layers:
            arrays.append(layer.W)
            arrays.append(layer.b)
            if layer.gamma is not None:
                arrays.append(layer.gamma)
                arrays.append(layer.beta)
        return arrays

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            spec=self.spec,
            layers=[
                Layer(
                    W=l.W.copy(),
                    b=l.b.copy(),
                    gamma=None if l.gamma is None else l.gamma.copy(),
                    beta=None if l.beta is None else l.beta.copy(),
                    u=None if l.u is None else l.u.copy(),
                )
                for l in self.layers
            ],
        )


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> NetworkParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit gamma."""
    layers = []
    for i in range(spec.n_layers):
        n_in = spec.layer_sizes[i]
        n_out = spec.layer_sizes[i + 1]
        bound = 1.0 / np.sqrt(n_in)
        W = rng.uniform(-bound, bound, size=(n_out, n_in))
        b = np.zeros(n_out)
        gamma = beta = None
        if spec.layer_norm and i < spec.n_layers - 1:
            gamma = np.ones(n_out)
            beta = np.zeros(n_out)
        u = None
        if spec.spectral_norm:
            u = rng.standard_normal(n_out)
            norm = np.linalg.norm(u)
            if norm == 0.0:
                u = np.ones(n_out)
                norm = np.sqrt(float(n_out))
            u = u / norm
        layers.append(Layer(W=W, b=b, gamma=gamma, beta=beta, u=u))
    return NetworkParams(spec=spec, layers=layers)


def layer_norm_apply(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """(x - mean)/sqrt(var + 1e-5) * gamma + beta over the last axis.

    Variance is the population (1/n) variance.
    """
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * gamma + beta


def spectral_normalize(
    W: np.ndarray, u: np.ndarray, n_iter: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Power-iteration spectral normalization: returns (W / sigma, new u).

    Each round refines v = normalize(W^T u) then u = normalize(W v);
    sigma is estimated as u^T W v. Near-zero W skips normalization.
    """
    if np.linalg.norm(W) < 1e-12:
        logger.warning("spectral_normalize: near-zero weight, skipping")
        return W, u
    v = None
    for _ in range(n_iter):
        v = W.T @ u
        v = v / np.linalg.norm(v)
        u = W @ v
        u = u / np.linalg.norm(u)
    sigma = float(u @ W @ v)
    return W / sigma, u


def _spectral_pieces(layer: Layer, update_u: bool):
    """(W_bar, sigma, u, v) under the frozen-u normalization rule.

    ``sigma = ||W^T u||`` equals ``u^T W v`` for ``v = normalize(W^T u)``,
    and its exact derivative w.r.t. W is the rank-one matrix u v^T, which
    backward() exploits. ``update_u=True`` first advances u by one power
    iteration; the normalization itself always uses the current u.
    """
    W = layer.W
    u = layer.u
    if np.linalg.norm(W) < 1e-12:
        logger.warning("spectral norm: near-zero weight, skipping layer")
        return W, None, None, None
    if update_u:
        x = W.T @ u
        nx = np.linalg.norm(x)
        if nx == 0.0:
            raise NumericError("spectral norm: W^T u vanished")
        v_pi = x / nx
        wu = W @ v_pi
        nwu = np.linalg.norm(wu)
        if nwu == 0.0:
            raise NumericError("spectral norm: W v vanished")
        u[:] = wu / nwu
    x = W.T @ u
    sigma = float(np.linalg.norm(x))
    if sigma == 0.0:
        raise NumericError("spectral norm: sigma is zero")
    v = x / sigma
    return W / sigma, sigma, u.copy(), v


@dataclass
class _LayerCache:
    A_in: object  # ndarray or csr input to the layer
    W_eff: np.ndarray
    sigma: Optional[float]
    u: Optional[np.ndarray]
    v: Optional[np.ndarray]
    Z: np.ndarray  # affine output
    ln_xhat: Optional[np.ndarray]
    ln_inv_std: Optional[np.ndarray]
    act_in: Optional[np.ndarray]  # input to ReLU (None on output layer)


def forward(
    params: NetworkParams, X, update_u: bool = False
) -> tuple[np.ndarray, list[_LayerCache]]:
    """Return (outputs, caches). Outputs are raw scores, shape (B, k)."""
    spec = params.spec
    if X.ndim != 2 or X.shape[1] != spec.n_inputs:
        raise ContractError(
            f"input has {X.shape[1] if X.ndim == 2 else '?'} columns, "
            f"network expects {spec.n_inputs}"
        )
    A = X
    caches: list[_LayerCache] = []
    for i, layer in enumerate(params.layers):
        if spec.spectral_norm:
            W_eff, sigma, u, v = _spectral_pieces(layer, update_u)
        else:
            W_eff, sigma, u, v = layer.W, None, None, None
        Z = A @ W_eff.T + layer.b
        Z = np.asarray(Z)
        if not np.all(np.isfinite(Z)):
            raise NumericError(f"layer {i}: non-finite activation")
        is_output = i == spec.n_layers - 1
        ln_xhat = ln_inv_std = None
        act_in = None
        if not is_output:
            H = Z
            if spec.layer_norm:
                mu = Z.mean(axis=1, keepdims=True)
                var = Z.var(axis=1, keepdims=True)
                inv_std = 1.0 / np.sqrt(var + LN_EPS)
                xhat = (Z - mu) * inv_std
                H = layer.gamma * xhat + layer.beta
                ln_xhat = xhat
                ln_inv_std = inv_std
            act_in = H
            A_next = np.maximum(H, 0.0)
        else:
            A_next = Z
        caches.append(
            _LayerCache(
                A_in=A,
                W_eff=W_eff,
                sigma=sigma,
                u=u,
                v=v,
                Z=Z,
                ln_xhat=ln_xhat,
                ln_inv_std=ln_inv_std,
                act_in=act_in,
            )
        )
        A = A_next
    return A, caches


def backward(
    params: NetworkParams,
    caches: list[_LayerCache],
    d_out: np.ndarray,
    need_input_grad: bool = False,
) -> tuple[list[np.ndarray], Optional[np.ndarray]]:
    """Gradients for the trainable arrays, plus optionally d(input).

    ``d_out`` is dL/d(raw outputs). The returned list lines up with
    ``params.trainable()``.
    """
    spec = params.spec
    grads_per_layer: list[list[np.ndarray]] = []
    dA = d_out
    for i in range(spec.n_layers - 1, -1, -1):
        layer = params.layers[i]
        cache = caches[i]
        is_output = i == spec.n_layers - 1
        if is_output:
            dZ = dA
            layer_grads = []
        else:
            dH = dA * (cache.act_in > 0.0)
            if spec.layer_norm:
                xhat = cache.ln_xhat
                inv_std = cache.ln_inv_std
                dgamma = (dH * xhat).sum(axis=0)
                dbeta = dH.sum(axis=0)
                dxhat = dH * layer.gamma
                m1 = dxhat.mean(axis=1, keepdims=True)
                m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
                dZ = inv_std * (dxhat - m1 - xhat * m2)
                layer_grads = [dgamma, dbeta]
            else:
                dZ = dH
                layer_grads = []

        A_in = cache.A_in
        if sparse.issparse(A_in):
            dW_eff = np.asarray((A_in.T @ dZ).T)
        else:
            dW_eff = dZ.T @ A_in
        db = dZ.sum(axis=0)
        if spec.spectral_norm and cache.sigma is not None:
            inner = float(np.sum(dW_eff * cache.W_eff))
            dW = (dW_eff - inner * np.outer(cache.u, cache.v)) / cache.sigma
        else:
            dW = dW_eff

        grads_per_layer.append([dW, db] + layer_grads)

        if i > 0 or need_input_grad:
            dA = dZ @ cache.W_eff
        else:
            dA = None

    grads: list[np.ndarray] = []
    for layer_grads in reversed(grads_per_layer):
        grads.extend(layer_grads)
    return grads, dA if need_input_grad else None


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def binary_cross_entropy(p, y) -> float:
    """Mean of -[y log p + (1-y) log(1-p)], p clamped to [1e-7, 1-1e-7]."""
    p = np.asarray(p, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValidationError("probabilities and labels must have the same length")
    p_c = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.mean(-y * np.log(p_c) - (1.0 - y) * np.log(1.0 - p_c)))


def multiclass_cross_entropy(q, z) -> float:
    """Mean of -log q[z] over the batch, q clamped below at 1e-7."""
    q = np.asarray(q, dtype=np.float64)
    z = np.asarray(z, dtype=np.int64).ravel()
    if q.ndim != 2 or q.shape[0] != z.shape[0]:
        raise ValidationError("probabilities must be (batch, classes) matching labels")
    if z.min(initial=0) < 0 or z.max(initial=0) >= q.shape[1]:
        raise ValidationError("labels out of range for probability columns")
    q_true = np.clip(q[np.arange(q.shape[0]), z], PROB_CLAMP, 1.0)
    return float(np.mean(-np.log(q_true)))


def bce_with_logits(
    logits: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean clamped BCE and its gradient wrt the logits.

    Samples whose probability clamp is active contribute zero gradient,
    matching the clamped loss exactly (it is locally constant there).
    """
    logits = np.asarray(logits, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if logits.shape != y.shape:
        raise ValidationError("logits and labels must have the same length")
    p = sigmoid(logits)
    loss = binary_cross_entropy(p, y)
    active = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    grad = (p - y) / len(y)
    grad[~active] = 0.0
    return loss, grad


def ce_with_logits(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean clamped softmax cross entropy and its gradient wrt the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ValidationError("logits must be (batch, classes) matching labels")
    B = logits.shape[0]
    p = softmax(logits)
    loss = multiclass_cross_entropy(p, labels)
    p_true = p[np.arange(B), labels]
    grad = p.copy()
    grad[np.arange(B), labels] -= 1.0
    grad /= B
    grad[p_true <= PROB_CLAMP] = 0.0
    return loss, grad


@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def for_params(cls, params: NetworkParams) -> "AdamState":
        arrays = params.trainable()
        return cls(
            step=0,
            m=[np.zeros_like(a) for a in arrays],
            v=[np.zeros_like(a) for a in arrays],
        )


def adam_step(
    params: NetworkParams,
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
):
    """One Adam update over ``params.trainable()``, in place."""
    arrays = params.trainable()
    if len(arrays) != len(grads):
        raise ValidationError("gradient list does not match trainable arrays")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("adam_step: non-finite gradient")
    state.step += 1
    t = state.step
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        a -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def predict_logits(params: NetworkParams, X) -> np.ndarray:
    out, _ = forward(params, X, update_u=False)
    return out[:, 0] if params.spec.n_outputs == 1 else out


def predict_proba(params: NetworkParams, X) -> np.ndarray:
    """Sigmoid scores for a single-output network."""
    if params.spec.n_outputs != 1:
        raise ValidationError("predict_proba requires a single-output network")
    return sigmoid(predict_logits(params, X))


def _array_manifest(params: NetworkParams) -> list[tuple[str, np.ndarray]]:
    named: list[tuple[str, np.ndarray]] = []
    for i, layer in enumerate(params.layers):
        named.append((f"W{i}", layer.W))
        named.append((f"b{i}", layer.b))
        if layer.gamma is not None:
            named.append((f"gamma{i}", layer.gamma))
            named.append((f"beta{i}", layer.beta))
        if layer.u is not None:
            named.append((f"u{i}", layer.u))
    return named


def save_checkpoint(path: Path | str, params: NetworkParams):
    """Versioned binary dump: magic, JSON header, float64 LE blocks."""
    named = _array_manifest(params)
    header = {
        "spec": params.spec.to_dict(),
        "arrays": [[name, list(a.shape)] for name, a in named],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, a in named:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path: Path | str) -> NetworkParams:
    with open(path, "rb") as f:
        magic = f.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValidationError(f"not a checkpoint file: {path}")
        (blob_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(blob_len).decode("utf-8"))
        spec = NetworkSpec.from_dict(header["spec"])
        arrays = {}
        for name, shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(count * 8), dtype="<f8").astype(np.float64)
            arrays[name] = data.reshape(shape)
        trailing = f.read(1)
        if trailing:
            raise ValidationError(f"trailing bytes in checkpoint: {path}")

    layers = []
    for i in range(spec.n_layers):
        if f"W{i}" not in arrays or f"b{i}" not in arrays:
            raise ValidationError(f"checkpoint missing layer {i} arrays")
        layers.append(
            Layer(
                W=arrays[f"W{i}"],
                b=arrays[f"b{i}"],
                gamma=arrays.get(f"gamma{i}"),
                beta=arrays.get(f"beta{i}"),
                u=arrays.get(f"u{i}"),
            )
        )
    params = NetworkParams(spec=spec, layers=layers)
    _validate_shapes(params)
    return params


def _validate_shapes(params: NetworkParams):
    spec = params.spec
    for i, layer in enumerate(params.layers):
        n_in = spec.layer_sizes[i]
        n_out = spec.layer_sizes[i + 1]
        if layer.W.shape != (n_out, n_in) or layer.b.shape != (n_out,):
            raise ValidationError(f"layer {i}: array shapes do not match spec")
        is_hidden = i < spec.n_layers - 1
        if spec.layer_norm and is_hidden:
            if layer.gamma is None or layer.gamma.shape != (n_out,):
                raise ValidationError(f"layer {i}: missing layer-norm arrays")
        if spec.spectral_norm:
            if layer.u is None or layer.u.shape != (n_out,):
                raise ValidationError(f"layer {i}: missing spectral-norm state")
