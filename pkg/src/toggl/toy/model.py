"""Small encoder-decoder with a joint CTC branch, written against numpy.

Encoder: per-frame two-layer tanh transform, sinusoidal positions, one
self-attention layer and a per-frame feed-forward layer, both residual.  The CTC head reads the encoder
output after frame duplication.  The decoder is an Elman recurrence with
input feeding and a single cross-attention read that is both content and
location aware (small convolution over the previous attention weights plus
a cumulative term).  The output layer sees the decoder state and the
context, with the context scaled by a sigmoid gate driven by the state.
All backward passes are written by hand and checked
against finite differences in the tests.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..codec import NEXT, PREV, PermutationTarget, TogglStream
from ..ctc import ctc_feasible, ctc_loss_batch, duplicate_frames, make_ctc_target
from ..errors import ConfigError, DataError

LOC_TAPS = 5
LOC_SCALE = 10.0
MASK_VALUE = -1e9
CHECKPOINT_MAGIC = b"TOGGLCK1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelDims:
    input_dim: int
    hidden: int
    vocab_size: int
    output_hidden: int = 256

    def __post_init__(self):
        if self.input_dim < 1 or self.vocab_size < 1 or self.output_hidden < 1:
            raise ConfigError("input_dim, vocab_size and output_hidden must be positive")
        if self.hidden < 2 or self.hidden % 2:
            raise ConfigError("hidden must be an even integer >= 2")

    @property
    def decoder_vocab(self) -> int:
        return self.vocab_size + 4

    @property
    def next_id(self) -> int:
        return self.vocab_size

    @property
    def prev_id(self) -> int:
        return self.vocab_size + 1

    @property
    def bos_id(self) -> int:
        return self.vocab_size + 2

    @property
    def eos_id(self) -> int:
        return self.vocab_size + 3

    def shapes(self) -> dict[str, tuple[int, ...]]:
        F, H, V, DV, O = self.input_dim, self.hidden, self.vocab_size, self.decoder_vocab, self.output_hidden
        return {
            "enc_w1": (F, H),
            "enc_b1": (H,),
            "enc_w2": (H, H),
            "enc_b2": (H,),
            "enc_wq": (H, H),
            "enc_wk": (H, H),
            "enc_wv": (H, H),
            "enc_wo": (H, H),
            "enc_w3": (H, H),
            "enc_b3": (H,),
            "enc_w4": (H, H),
            "enc_b4": (H,),
            "ctc_w": (H, V + 1),
            "ctc_b": (V + 1,),
            "dec_emb": (DV, H),
            "dec_wc": (H, H),
            "dec_wr": (H, H),
            "dec_b": (H,),
            "att_wq": (H, H),
            "att_wk": (H, H),
            "att_loc": (LOC_TAPS + 1,),
            "gate_w": (H, H),
            "gate_b": (H,),
            "out_w1": (2 * H, O),
            "out_b1": (O,),
            "out_w2": (O, DV),
            "out_b2": (DV,),
        }


@dataclass
class ToyModelParams:
    dims: ModelDims
    lexicon: tuple[str, ...]
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        self.lexicon = tuple(self.lexicon)
        if len(self.lexicon) != self.dims.vocab_size:
            raise ConfigError("lexicon size does not match vocab_size")
        if len(set(self.lexicon)) != len(self.lexicon) or NEXT in self.lexicon or PREV in self.lexicon:
            raise ConfigError("lexicon entries must be unique lexical tokens")
        expected = self.dims.shapes()
        if set(self.tensors) != set(expected):
            raise ConfigError("parameter names do not match the model layout")
        for name, shape in expected.items():
            t = self.tensors[name]
            if t.shape != shape:
                raise ConfigError(f"{name} has shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise DataError(f"{name} contains non-finite values")

    @property
    def token_ids(self) -> dict[str, int]:
        ids = {tok: i for i, tok in enumerate(self.lexicon)}
        ids[NEXT] = self.dims.next_id
        ids[PREV] = self.dims.prev_id
        return ids

    @property
    def ctc_vocab(self) -> dict[str, int]:
        return {tok: i + 1 for i, tok in enumerate(self.lexicon)}

    def copy(self) -> "ToyModelParams":
        return ToyModelParams(self.dims, self.lexicon, {k: v.copy() for k, v in self.tensors.items()})

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_params(dims: ModelDims, lexicon: Sequence[str], seed: int) -> ToyModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights and biases, unit-normal embeddings, zero location taps."""
    rng = np.random.default_rng(seed)
    tensors = {}
    fan_in = {"enc_b1": dims.input_dim, "ctc_b": dims.hidden, "out_b1": 2 * dims.hidden, "out_b2": dims.output_hidden}
    for name, shape in dims.shapes().items():
        if name == "dec_emb":
            tensors[name] = rng.standard_normal(shape)
        elif name == "att_loc":
            tensors[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0] if len(shape) == 2 else fan_in.get(name, dims.hidden))
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ToyModelParams(dims, tuple(lexicon), tensors)


def positional_encoding(T: int, H: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(H // 2)[None, :]
    ang = pos / 10000.0 ** (2 * i / H)
    out = np.zeros((T, H))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


def pad_frames(frames: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length (T_b, F) matrices into (B, T, F) plus a frame mask."""
    if not frames:
        raise DataError("empty batch")
    T = max(f.shape[0] for f in frames)
    F = frames[0].shape[1]
    X = np.zeros((len(frames), T, F))
    mask = np.zeros((len(frames), T), dtype=bool)
    for b, f in enumerate(frames):
        if f.ndim != 2 or f.shape[1] != F or f.shape[0] == 0:
            raise DataError("frames must be non-empty matrices with a shared feature size")
        X[b, : len(f)] = f
        mask[b, : len(f)] = True
    return X, mask


# -- encoder ------------------------------------------------------------------


def encode(p: dict, X: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, dict]:
    H = p["enc_w2"].shape[0]
    h1 = np.tanh(X @ p["enc_w1"] + p["enc_b1"])
    h2 = np.tanh(h1 @ p["enc_w2"] + p["enc_b2"])
    z = h2 + positional_encoding(X.shape[1], H)
    q, k, v = z @ p["enc_wq"], z @ p["enc_wk"], z @ p["enc_wv"]
    scores = np.where(mask[:, None, :], q @ k.transpose(0, 2, 1) / np.sqrt(H), MASK_VALUE)
    A = _softmax(scores)
    ctx = A @ v
    y = z + ctx @ p["enc_wo"]
    f = np.tanh(y @ p["enc_w3"] + p["enc_b3"])
    enc = y + f @ p["enc_w4"] + p["enc_b4"]
    return enc, dict(X=X, h1=h1, h2=h2, z=z, q=q, k=k, v=v, A=A, ctx=ctx, y=y, f=f)


def encode_backward(p: dict, d_enc: np.ndarray, cache: dict, grads: dict) -> None:
    H = p["enc_w2"].shape[0]
    c = cache
    grads["enc_w4"] += _flat(c["f"]).T @ _flat(d_enc)
    grads["enc_b4"] += _flat(d_enc).sum(0)
    df = (d_enc @ p["enc_w4"].T) * (1 - c["f"] ** 2)
    grads["enc_w3"] += _flat(c["y"]).T @ _flat(df)
    grads["enc_b3"] += _flat(df).sum(0)
    d_enc = d_enc + df @ p["enc_w3"].T
    grads["enc_wo"] += _flat(c["ctx"]).T @ _flat(d_enc)
    d_ctx = d_enc @ p["enc_wo"].T
    dA = d_ctx @ c["v"].transpose(0, 2, 1)
    dv = c["A"].transpose(0, 2, 1) @ d_ctx
    ds = c["A"] * (dA - (dA * c["A"]).sum(-1, keepdims=True)) / np.sqrt(H)
    dq = ds @ c["k"]
    dk = ds.transpose(0, 2, 1) @ c["q"]
    zf = _flat(c["z"])
    grads["enc_wq"] += zf.T @ _flat(dq)
    grads["enc_wk"] += zf.T @ _flat(dk)
    grads["enc_wv"] += zf.T @ _flat(dv)
    dz = d_enc + dq @ p["enc_wq"].T + dk @ p["enc_wk"].T + dv @ p["enc_wv"].T
    da2 = dz * (1 - c["h2"] ** 2)
    grads["enc_w2"] += _flat(c["h1"]).T @ _flat(da2)
    grads["enc_b2"] += _flat(da2).sum(0)
    da1 = (da2 @ p["enc_w2"].T) * (1 - c["h1"] ** 2)
    grads["enc_w1"] += _flat(c["X"]).T @ _flat(da1)
    grads["enc_b1"] += _flat(da1).sum(0)


# -- decoder ------------------------------------------------------------------


def location_matrix(taps: np.ndarray, T: int) -> np.ndarray:
    """(T, T) matrix L with ``(prev_alpha @ L)[t]`` = scaled location score of frame t.

    L[t', t] = taps[t - t'] for 0 <= t - t' < LOC_TAPS, plus taps[-1] for every
    t' <= t (the cumulative term).
    """
    d = np.arange(T)[None, :] - np.arange(T)[:, None]
    L = np.where(d >= 0, taps[LOC_TAPS], 0.0)
    band = (d >= 0) & (d < LOC_TAPS)
    L[band] += taps[d[band]]
    return LOC_SCALE * L


def location_taps_grad(G: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the taps given G = dLoss/dL (before scaling)."""
    T = G.shape[0]
    out = np.zeros(LOC_TAPS + 1)
    for j in range(min(LOC_TAPS, T)):
        out[j] = np.trace(G, offset=j)
    out[LOC_TAPS] = np.triu(G).sum()
    return LOC_SCALE * out


class _DecoderState:
    """One attention/recurrence step shared by teacher forcing and greedy search."""

    def __init__(self, p: dict, E: np.ndarray, mask: np.ndarray):
        R, T, H = E.shape
        self.p, self.E, self.mask = p, E, mask
        self.Kd = E @ p["att_wk"]
        self.scale = 1.0 / np.sqrt(H)
        self.s = np.zeros((R, H))
        self.c = np.zeros((R, H))
        self.alpha = np.zeros((R, T))
        self.alpha[:, 0] = 1.0
        self.L = location_matrix(p["att_loc"], T)

    def step(self, y_prev: np.ndarray) -> tuple[np.ndarray, dict]:
        p = self.p
        s_prev, c_prev, a_prev = self.s, self.c, self.alpha
        s = np.tanh(p["dec_emb"][y_prev] + c_prev @ p["dec_wc"] + s_prev @ p["dec_wr"] + p["dec_b"])
        qd = s @ p["att_wq"]
        e = (self.Kd @ qd[:, :, None])[:, :, 0] * self.scale + a_prev @ self.L
        alpha = _softmax(np.where(self.mask, e, MASK_VALUE))
        c = (alpha[:, None, :] @ self.E)[:, 0]
        # the state selects which part of the context to read out
        g = 1.0 / (1.0 + np.exp(-(s @ p["gate_w"] + p["gate_b"])))
        cat = np.concatenate([s, c * g], axis=1)
        o = np.tanh(cat @ p["out_w1"] + p["out_b1"])
        logits = o @ p["out_w2"] + p["out_b2"]
        self.s, self.c, self.alpha = s, c, alpha
        cache = dict(y=y_prev, s_prev=s_prev, c_prev=c_prev, a_prev=a_prev, s=s, qd=qd, alpha=alpha, c=c, g=g, cat=cat, o=o)
        return logits, cache


def decoder_forward(p: dict, E: np.ndarray, mask: np.ndarray, yin: np.ndarray, yout: np.ndarray, ymask: np.ndarray):
    """Teacher-forced pass; returns per-row mean cross-entropy and a cache."""
    state = _DecoderState(p, E, mask)
    R, U = yin.shape
    steps, nll = [], np.zeros((R, U))
    rows = np.arange(R)
    for u in range(U):
        logits, cache = state.step(yin[:, u])
        logp = _log_softmax(logits)
        cache["probs"] = np.exp(logp)
        nll[:, u] = -logp[rows, yout[:, u]]
        steps.append(cache)
    lengths = ymask.sum(1)
    row_loss = (nll * ymask).sum(1) / lengths
    return row_loss, dict(state=state, steps=steps, yout=yout, ymask=ymask, lengths=lengths)


def decoder_backward(p: dict, row_weights: np.ndarray, cache: dict, grads: dict) -> np.ndarray:
    """Backprop ``sum_r row_weights[r] * row_loss[r]``; returns the gradient w.r.t. E."""
    state = cache["state"]
    E, Kd, scale, L = state.E, state.Kd, state.scale, state.L
    R, T, H = E.shape
    steps = cache["steps"]
    U = len(steps)
    rows = np.arange(R)
    w = row_weights / cache["lengths"]
    ds_next = np.zeros((R, H))
    dc_next = np.zeros((R, H))
    da_next = np.zeros((R, T))
    dcs = np.zeros((U, R, H))
    des = np.zeros((U, R, T))
    dpres = np.zeros((U, R, H))
    dqds = np.zeros((U, R, H))
    for u in range(U - 1, -1, -1):
        st = steps[u]
        dlogits = st["probs"].copy()
        dlogits[rows, cache["yout"][:, u]] -= 1.0
        dlogits *= (w * cache["ymask"][:, u])[:, None]
        grads["out_w2"] += st["o"].T @ dlogits
        grads["out_b2"] += dlogits.sum(0)
        do = dlogits @ p["out_w2"].T
        dh = do * (1 - st["o"] ** 2)
        grads["out_w1"] += st["cat"].T @ dh
        grads["out_b1"] += dh.sum(0)
        dcat = dh @ p["out_w1"].T
        g = st["g"]
        dgate = dcat[:, H:] * st["c"] * g * (1 - g)
        grads["gate_w"] += st["s"].T @ dgate
        grads["gate_b"] += dgate.sum(0)
        ds = dcat[:, :H] + ds_next + dgate @ p["gate_w"].T
        dc = dcat[:, H:] * g + dc_next

        alpha = st["alpha"]
        dalpha = (E @ dc[:, :, None])[:, :, 0] + da_next
        de = alpha * (dalpha - (alpha * dalpha).sum(1, keepdims=True))
        dqd = (de[:, None, :] @ Kd)[:, 0] * scale
        da_next = de @ L.T
        dcs[u], des[u], dqds[u] = dc, de, dqd

        s = st["s"]
        ds = ds + dqd @ p["att_wq"].T
        dpre = ds * (1 - s**2)
        dpres[u] = dpre
        ds_next = dpre @ p["dec_wr"].T
        dc_next = dpre @ p["dec_wc"].T

    def stack(key):
        return np.stack([st[key] for st in steps])

    alphas, qds = stack("alpha"), stack("qd")
    dE = alphas.transpose(1, 2, 0) @ dcs.transpose(1, 0, 2)
    dKd = des.transpose(1, 2, 0) @ qds.transpose(1, 0, 2) * scale
    grads["att_loc"] += location_taps_grad(_flat(stack("a_prev")).T @ _flat(des))
    grads["att_wq"] += _flat(stack("s")).T @ _flat(dqds)
    flat_dpre = _flat(dpres)
    grads["dec_b"] += flat_dpre.sum(0)
    grads["dec_wr"] += _flat(stack("s_prev")).T @ flat_dpre
    grads["dec_wc"] += _flat(stack("c_prev")).T @ flat_dpre
    ys = stack("y").reshape(-1)
    grads["dec_emb"] += (ys[None, :] == np.arange(len(grads["dec_emb"]))[:, None]) @ flat_dpre
    grads["att_wk"] += _flat(E).T @ _flat(dKd)
    dE += dKd @ p["att_wk"].T
    return dE


# -- joint loss ---------------------------------------------------------------


@dataclass(frozen=True)
class LossConfig:
    ctc_weight: float = 0.3
    pit_enabled: bool = True
    duplication_factor: int = 3
    skip_infeasible_ctc: bool = False

    def __post_init__(self):
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ConfigError("ctc_weight must lie in [0, 1]")
        if int(self.duplication_factor) != self.duplication_factor or self.duplication_factor < 1:
            raise ConfigError("duplication_factor must be an integer >= 1")


@dataclass
class LossResult:
    total: float
    att_loss: float
    ctc_loss: float
    perm_index: list[int]
    grads: dict[str, np.ndarray] = field(repr=False)
    ctc_skipped: int = 0


def stream_to_ids(stream: Sequence[str], ids: dict[str, int]) -> list[int]:
    try:
        return [ids[tok] for tok in stream]
    except KeyError as exc:
        raise DataError(f"token {exc.args[0]!r} is not in the model vocabulary") from None


def loss_and_grad(
    model: ToyModelParams,
    frames: Sequence[np.ndarray],
    permutation_targets: Sequence[Sequence[PermutationTarget]],
    config: LossConfig,
    need_grad: bool = True,
) -> LossResult:
    """Joint objective over a batch of items.

    ``(1 - λ)`` times the batch mean of the per-item minimum (over speaker
    orders) of the per-token decoder cross-entropy, plus ``λ`` times the batch
    mean of the per-token CTC loss on the duplicated encoder output against
    the canonical target.  Rows are tried in the order given, so ties go to
    the earliest permutation.
    """
    if len(frames) != len(permutation_targets):
        raise DataError("one permutation target list per item is required")
    p, dims = model.tensors, model.dims
    lam = config.ctc_weight
    n = int(config.duplication_factor)
    X, mask = pad_frames(frames)
    B = X.shape[0]
    if X.shape[2] != dims.input_dim:
        raise DataError(f"frames have {X.shape[2]} features, model expects {dims.input_dim}")
    lengths = mask.sum(1)
    enc, enc_cache = encode(p, X, mask)
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    d_enc = np.zeros_like(enc)

    canon = []
    row_item, row_perm, row_ids = [], [], []
    ids = model.token_ids
    for b, targets in enumerate(permutation_targets):
        if not targets or not targets[0].canonical:
            raise DataError("permutation targets must start with the canonical order")
        canon.append(targets[0])
        chosen = targets if config.pit_enabled else targets[:1]
        for k, t in enumerate(chosen):
            row_item.append(b)
            row_perm.append(k)
            row_ids.append(stream_to_ids(t.stream, ids) + [dims.eos_id])
    row_item = np.asarray(row_item)
    U = max(len(r) for r in row_ids)
    R = len(row_ids)
    yin = np.full((R, U), dims.eos_id)
    yout = np.full((R, U), dims.eos_id)
    ymask = np.zeros((R, U))
    for r, seq in enumerate(row_ids):
        yin[r, 0] = dims.bos_id
        yin[r, 1 : len(seq)] = seq[:-1]
        yout[r, : len(seq)] = seq
        ymask[r, : len(seq)] = 1.0

    att_loss = 0.0
    perm_index = [0] * B
    if lam < 1.0:
        row_loss, dec_cache = decoder_forward(p, enc[row_item], mask[row_item], yin, yout, ymask)
        weights = np.zeros(R)
        for b in range(B):
            idx = np.flatnonzero(row_item == b)
            best = idx[int(np.argmin(row_loss[idx]))]
            perm_index[b] = int(row_perm[best])
            att_loss += row_loss[best] / B
            weights[best] = (1.0 - lam) / B
        if need_grad:
            dE = decoder_backward(p, weights, dec_cache, grads)
            owner = (row_item[None, :] == np.arange(B)[:, None]).astype(np.float64)
            d_enc += (owner @ dE.reshape(R, -1)).reshape(d_enc.shape)

    ctc_loss = 0.0
    skipped = 0
    if lam > 0.0:
        vocab = model.ctc_vocab
        ctc_targets = [make_ctc_target(t.stream, vocab) for t in canon]
        keep = [b for b in range(B) if ctc_feasible(n * int(lengths[b]), ctc_targets[b])]
        if not config.skip_infeasible_ctc:
            keep = list(range(B))
        skipped = B - len(keep)
        if keep:
            dup = duplicate_frames(enc[keep].transpose(1, 0, 2), n).transpose(1, 0, 2)
            logits = dup @ p["ctc_w"] + p["ctc_b"]
            logp = _log_softmax(logits)
            nll, g = ctc_loss_batch(logp, n * lengths[keep], [ctc_targets[b] for b in keep])
            tlen = np.array([max(1, len(ctc_targets[b])) for b in keep], dtype=float)
            ctc_loss = float((nll / tlen).sum() / B)
            if need_grad:
                g = g * (lam / (B * tlen))[:, None, None]
                dlogits = g - np.exp(logp) * g.sum(-1, keepdims=True)
                grads["ctc_w"] += _flat(dup).T @ _flat(dlogits)
                grads["ctc_b"] += _flat(dlogits).sum(0)
                d_dup = dlogits @ p["ctc_w"].T
                Tk = enc.shape[1]
                d_enc[keep] += d_dup.reshape(len(keep), Tk, n, -1).sum(2)

    if need_grad:
        encode_backward(p, d_enc, enc_cache, grads)
    total = (1.0 - lam) * att_loss + lam * ctc_loss
    return LossResult(float(total), float(att_loss), float(ctc_loss), perm_index, grads, skipped)


# -- inference ----------------------------------------------------------------


@dataclass(frozen=True)
class DecodeResult:
    stream: TogglStream
    truncated: bool


def decode_greedy(
    model: ToyModelParams,
    frames: Sequence[np.ndarray],
    max_len: int = 40,
    control_cap: int | None = 3,
    allow_control: bool = True,
) -> list[DecodeResult]:
    """Greedy search from BOS until EOS or ``max_len`` tokens.

    ``control_cap`` bounds runs of consecutive control tokens (None disables
    the guard).  ``allow_control=False`` forbids control tokens altogether,
    which turns the model into a single-stream recognizer.
    """
    if max_len < 1:
        raise ConfigError("max_len must be >= 1")
    p, dims = model.tensors, model.dims
    X, mask = pad_frames(frames)
    enc, _ = encode(p, X, mask)
    B = X.shape[0]
    state = _DecoderState(p, enc, mask)
    y = np.full(B, dims.bos_id)
    run = np.zeros(B, dtype=int)
    done = np.zeros(B, dtype=bool)
    out: list[list[int]] = [[] for _ in range(B)]
    for _ in range(max_len):
        logits, _ = state.step(y)
        logits[:, dims.bos_id] = -np.inf
        block = np.full(B, not allow_control)
        if control_cap is not None:
            block |= run >= control_cap
        logits[block, dims.next_id] = -np.inf
        logits[block, dims.prev_id] = -np.inf
        y = logits.argmax(1)
        for b in np.flatnonzero(~done):
            if y[b] == dims.eos_id:
                done[b] = True
            else:
                out[b].append(int(y[b]))
        is_ctrl = (y == dims.next_id) | (y == dims.prev_id)
        run = np.where(is_ctrl, run + 1, 0)
        if done.all():
            break
    names = list(model.lexicon) + [NEXT, PREV]
    return [DecodeResult(tuple(names[i] for i in seq), not d) for seq, d in zip(out, done)]


# -- checkpoints --------------------------------------------------------------


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path: str | Path, model: ToyModelParams, config: dict | None = None) -> None:
    """Write magic, header length, JSON header, then the raw float64 tensors."""
    config = config or {}
    names = sorted(model.tensors)
    header = {
        "version": CHECKPOINT_VERSION,
        "dims": asdict(model.dims),
        "lexicon": list(model.lexicon),
        "config": config,
        "config_hash": config_hash(config),
        "tensors": [[name, list(model.tensors[name].shape)] for name in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(len(blob).to_bytes(8, "little"))
    buf.write(blob)
    for name in names:
        buf.write(np.ascontiguousarray(model.tensors[name], dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[ToyModelParams, dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DataError(f"{path} is not a checkpoint")
    try:
        pos = len(CHECKPOINT_MAGIC)
        size = int.from_bytes(raw[pos : pos + 8], "little")
        pos += 8
        header = json.loads(raw[pos : pos + size])
        pos += size
        if header.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {header.get('version')}")
        tensors = {}
        for name, shape in header["tensors"]:
            count = int(np.prod(shape, dtype=np.int64))
            tensors[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path} is truncated or malformed: {exc}") from exc
    if pos != len(raw):
        raise DataError(f"{path} has trailing or missing bytes")
    model = ToyModelParams(ModelDims(**header["dims"]), tuple(header["lexicon"]), tensors)
    return model, header
