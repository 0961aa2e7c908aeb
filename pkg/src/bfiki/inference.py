"""Adversarial keystroke inference and password ranking.

A shared 1-D CNN feature extractor feeds a keystroke classifier and, through
a gradient reversal layer, a same/different-domain discriminator. Training
pairs same-key segments so the discriminator's reversed gradient strips
domain-specific (transition) features from the shared representation.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import nn
from .errors import (BadDistribution, EmptySegment, KeyUnderrepresented,
                     UnknownKey)
from .segmenter import DomainId, KeystrokeSegment

FEATURE_LEN = 32
CONV_CHANNELS = (16, 32, 64)
CONV_KERNEL = 5
HIDDEN = 128
DEFAULT_LAMBDA = 0.5


@dataclass(frozen=True)
class KeyboardLayout:
    name: str
    keys: tuple
    positions: dict

    def index(self, key: str) -> int:
        try:
            return self.keys.index(key)
        except ValueError:
            raise UnknownKey(f"key {key!r} not in layout {self.name!r}") from None

    def distance(self, a: str, b: str) -> float:
        xa, ya = self.positions[a]
        xb, yb = self.positions[b]
        return math.hypot(xa - xb, ya - yb)


def numeric_layout() -> KeyboardLayout:
    """Phone-style numeric pad: 123 / 456 / 789 / 0, key pitch 1."""
    rows = ["123", "456", "789", " 0 "]
    positions = {}
    for y, row in enumerate(rows):
        for x, key in enumerate(row):
            if key != " ":
                positions[key] = (float(x), float(y))
    return KeyboardLayout("numeric", tuple("0123456789"), positions)


def qwerty36_layout() -> KeyboardLayout:
    """Lowercase a-z plus 0-9 on a QWERTY grid."""
    positions = {}
    for x, key in enumerate("1234567890"):
        positions[key] = (float(x), 0.0)
    for x, key in enumerate("qwertyuiop"):
        positions[key] = (float(x), 1.0)
    for x, key in enumerate("asdfghjkl"):
        positions[key] = (x + 0.3, 2.0)
    for x, key in enumerate("zxcvbnm"):
        positions[key] = (x + 0.7, 3.0)
    keys = tuple("abcdefghijklmnopqrstuvwxyz") + tuple("0123456789")
    return KeyboardLayout("qwerty36", keys, positions)


LAYOUTS = {"numeric": numeric_layout, "qwerty36": qwerty36_layout}


@dataclass(frozen=True)
class TrainingPair:
    seg_a: KeystrokeSegment
    seg_b: KeystrokeSegment
    y: str
    delta: int        # 0 = same domain, 1 = different domains


@dataclass
class KiModel:
    layout: KeyboardLayout
    params: nn.ParamStore
    lambda_: float = DEFAULT_LAMBDA
    loss_history: List[float] = field(default_factory=list)

    @property
    def n_keys(self) -> int:
        return len(self.layout.keys)


@dataclass(frozen=True)
class PasswordCandidate:
    password: str
    probability: float


# ---------------------------------------------------------------------------
# pairing
# ---------------------------------------------------------------------------

def make_pairs(segments: Sequence[KeystrokeSegment], seed: int) -> List[TrainingPair]:
    """Pair every segment with a random same-key partner.

    Partners are drawn to balance the same/different-domain classes whenever
    the data allows; delta is computed from the actual domain labels.
    """
    by_key: Dict[str, List[KeystrokeSegment]] = {}
    for seg in segments:
        if seg.key_label is None:
            raise ValueError("make_pairs needs key-labeled segments")
        by_key.setdefault(seg.key_label, []).append(seg)
    for key, group in by_key.items():
        if len(group) < 2:
            raise KeyUnderrepresented(f"key {key!r} has {len(group)} segment(s)")

    rng = np.random.default_rng(seed)
    pairs: List[TrainingPair] = []
    for key in sorted(by_key):
        group = by_key[key]
        for a_idx, anchor in enumerate(group):
            same = [s for i, s in enumerate(group)
                    if i != a_idx and s.domain_label == anchor.domain_label]
            diff = [s for i, s in enumerate(group)
                    if i != a_idx and s.domain_label != anchor.domain_label]
            want_diff = bool(rng.integers(2))
            pool = (diff if (want_diff and diff) else same) or diff
            partner = pool[int(rng.integers(len(pool)))]
            delta = 0 if partner.domain_label == anchor.domain_label else 1
            pairs.append(TrainingPair(anchor, partner, key, delta))
    return pairs


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

def init_ki_params(n_keys: int, rng: np.random.Generator,
                   with_discriminator: bool = True) -> nn.ParamStore:
    params = nn.ParamStore()
    f32 = np.float32            # training runs in 32-bit for speed
    c_in = 2
    for i, c_out in enumerate(CONV_CHANNELS):
        fan_in = c_in * CONV_KERNEL
        params.add(f"f.conv{i}.w",
                   nn.kaiming_uniform(rng, (c_out, c_in, CONV_KERNEL), fan_in, f32))
        params.add(f"f.conv{i}.b", nn.bias_uniform(rng, c_out, fan_in, f32))
        c_in = c_out
    feat = CONV_CHANNELS[-1] * FEATURE_LEN
    for head, out_dim in (("c", n_keys),) + ((("d", 2),) if with_discriminator else ()):
        params.add(f"{head}.fc0.w", nn.kaiming_uniform(rng, (HIDDEN, feat), feat, f32))
        params.add(f"{head}.fc0.b", nn.bias_uniform(rng, HIDDEN, feat, f32))
        params.add(f"{head}.fc1.w",
                   nn.kaiming_uniform(rng, (out_dim, HIDDEN), HIDDEN, f32))
        params.add(f"{head}.fc1.b", nn.bias_uniform(rng, out_dim, HIDDEN, f32))
    return params


def new_ki_model(layout: KeyboardLayout, seed: int,
                 lambda_: float = DEFAULT_LAMBDA,
                 with_discriminator: bool = True) -> KiModel:
    rng = np.random.default_rng(seed)
    return KiModel(layout=layout,
                   params=init_ki_params(len(layout.keys), rng, with_discriminator),
                   lambda_=lambda_)


def _pair_input(seg_a: KeystrokeSegment, seg_b: KeystrokeSegment) -> np.ndarray:
    """Channel-concatenate two segments; the shorter is edge-padded.

    Each channel is min-max normalized so the classifier is invariant to the
    window-level scale, which depends on which other keys share the window.
    """
    a, b = np.asarray(seg_a.samples), np.asarray(seg_b.samples)
    if len(a) == 0 or len(b) == 0:
        raise EmptySegment("segments must be non-empty")
    n = max(len(a), len(b))
    if len(a) < n:
        a = np.concatenate([a, np.full(n - len(a), a[-1])])
    if len(b) < n:
        b = np.concatenate([b, np.full(n - len(b), b[-1])])
    x = np.stack([a, b]).astype(np.float32)
    for c in range(2):
        lo, hi = x[c].min(), x[c].max()
        x[c] = (x[c] - lo) / (hi - lo) if hi > lo else 0.0
    return x


def _feature(model: KiModel, x: nn.Tensor) -> nn.Tensor:
    h = x
    for i in range(len(CONV_CHANNELS)):
        h = nn.relu(nn.conv1d(h, model.params[f"f.conv{i}.w"],
                              model.params[f"f.conv{i}.b"], padding="same"))
    pooled = nn.adaptive_avg_pool1d(h, FEATURE_LEN)
    return nn.reshape(pooled, (CONV_CHANNELS[-1] * FEATURE_LEN,))


def _head(model: KiModel, head: str, feat: nn.Tensor) -> nn.Tensor:
    p = model.params
    h = nn.relu(nn.linear(feat, p[f"{head}.fc0.w"], p[f"{head}.fc0.b"]))
    return nn.linear(h, p[f"{head}.fc1.w"], p[f"{head}.fc1.b"])


def _forward_logits(model: KiModel, pair: Tuple[KeystrokeSegment, KeystrokeSegment],
                    with_domain: bool) -> Tuple[nn.Tensor, Optional[nn.Tensor]]:
    x = nn.Tensor(_pair_input(*pair))
    feat = _feature(model, x)
    key_logits = _head(model, "c", feat)
    dom_logits = None
    if with_domain:
        dom_logits = _head(model, "d", nn.grad_reverse(feat, 1.0))
    return key_logits, dom_logits


def forward(model: KiModel,
            pair: Tuple[KeystrokeSegment, KeystrokeSegment]
            ) -> Tuple[np.ndarray, np.ndarray]:
    """Key and domain-discrepancy distributions for a segment pair."""
    key_logits, dom_logits = _forward_logits(model, pair,
                                             with_domain="d.fc0.w" in model.params)
    key_dist = nn.softmax(key_logits.data)
    dom_dist = nn.softmax(dom_logits.data) if dom_logits is not None \
        else np.array([0.5, 0.5])
    return key_dist, dom_dist


def classify(model: KiModel, segment: KeystrokeSegment) -> np.ndarray:
    """Key distribution; the pair input is the segment replicated."""
    key_logits, _ = _forward_logits(model, (segment, segment), with_domain=False)
    return nn.softmax(key_logits.data)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train_adversarial(segments: Sequence[KeystrokeSegment], model: KiModel,
                      epochs: int, lr: float, batch: int = 16,
                      seed: int = 0) -> KiModel:
    """Min-max training via the gradient reversal layer.

    Per batch the scalar loss is mean Lc + lambda*mean Ld with the
    discriminator branch behind the GRL, so theta_f/theta_c descend on
    Lc - lambda*Ld while theta_d descends on Ld. With lambda = 0 the
    discriminator branch is skipped entirely and training reduces to plain
    classification. Convolutions run per pair; the dense heads run batched.
    """
    opt = nn.Adam(model.params, lr=lr)
    use_domain = model.lambda_ != 0.0 and "d.fc0.w" in model.params
    shuffle_rng = np.random.default_rng(seed + 7919)
    decay_epochs = {int(epochs * 0.7)} if epochs >= 6 else set()
    for epoch in range(epochs):
        if epoch in decay_epochs and epoch > 0:
            opt.lr *= 0.3
        pairs = make_pairs(segments, seed=seed + epoch)
        order = np.arange(len(pairs))
        shuffle_rng.shuffle(order)
        epoch_lc = 0.0
        for start in range(0, len(order), batch):
            chunk = [pairs[i] for i in order[start:start + batch]]
            model.params.zero_grad()
            feats = nn.stack_rows([
                _feature(model, nn.Tensor(_pair_input(p.seg_a, p.seg_b)))
                for p in chunk])
            key_logits = _head(model, "c", feats)
            labels = [model.layout.index(p.y) for p in chunk]
            lc = nn.cross_entropy_rows(key_logits, labels)
            if use_domain:
                dom_logits = _head(model, "d", nn.grad_reverse(feats, 1.0))
                ld = nn.cross_entropy_rows(dom_logits, [p.delta for p in chunk])
                loss = nn.add(lc, nn.scale(ld, model.lambda_))
            else:
                loss = lc
            loss.backward()
            opt.step()
            epoch_lc += float(lc.data) * len(chunk)
        model.loss_history.append(epoch_lc / len(pairs))
    return model


def train_classifier(segments: Sequence[KeystrokeSegment], model: KiModel,
                     epochs: int, lr: float, batch: int = 16,
                     seed: int = 0) -> KiModel:
    """Plain classification baseline (identical to lambda = 0 training)."""
    plain = KiModel(layout=model.layout, params=model.params, lambda_=0.0,
                    loss_history=model.loss_history)
    return train_adversarial(segments, plain, epochs, lr, batch, seed)


# ---------------------------------------------------------------------------
# ranking and metrics
# ---------------------------------------------------------------------------

def rank_passwords(dists: Sequence, keys: Sequence[str],
                   n: int) -> List[PasswordCandidate]:
    """Top-n key sequences under the per-position product measure.

    Best-first search over partial products; never materializes the full
    |keys|^K space. Ties are broken lexicographically by key sequence.
    """
    if n < 1:
        return []
    k = len(dists)
    if k == 0:
        return []
    mats = []
    for dist in dists:
        d = np.asarray(dist, dtype=np.float64)
        if d.ndim != 1 or len(d) != len(keys):
            raise BadDistribution(f"distribution shape {d.shape} vs {len(keys)} keys")
        if (d < 0).any() or abs(float(d.sum()) - 1.0) > 1e-6:
            raise BadDistribution("entries must be non-negative and sum to 1")
        mats.append(sorted(((float(p), key) for p, key in zip(d, keys)),
                           key=lambda t: (-t[0], t[1])))

    def prob_of(ranks: Tuple[int, ...]) -> float:
        p = 1.0
        for pos, r in enumerate(ranks):
            p *= mats[pos][r][0]
        return p

    def word_of(ranks: Tuple[int, ...]) -> str:
        return "".join(mats[pos][r][1] for pos, r in enumerate(ranks))

    start = (0,) * k
    heap = [(-prob_of(start), word_of(start), start)]
    seen = {start}
    out: List[PasswordCandidate] = []
    n_keys = len(keys)
    while heap and len(out) < n:
        neg_p, word, ranks = heapq.heappop(heap)
        out.append(PasswordCandidate(password=word, probability=-neg_p))
        for pos in range(k):
            if ranks[pos] + 1 < n_keys:
                child = ranks[:pos] + (ranks[pos] + 1,) + ranks[pos + 1:]
                if child not in seen:
                    seen.add(child)
                    heapq.heappush(heap, (-prob_of(child), word_of(child), child))
    return out


def top_n_accuracy(results: Sequence[Tuple[Sequence[PasswordCandidate], str]],
                   n: Optional[int] = None) -> float:
    """Fraction of trials whose true password appears in the candidate list
    (optionally truncated to the first n entries)."""
    if not results:
        return 0.0
    hits = 0
    for candidates, truth in results:
        listed = candidates if n is None else candidates[:n]
        if any(c.password == truth for c in listed):
            hits += 1
    return hits / len(results)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_ki_checkpoint(path: str, model: KiModel) -> None:
    params = model.params.copy()
    params.add("meta.lambda", np.asarray([model.lambda_], dtype=np.float64))
    params.add("meta.layout", np.asarray(
        [0.0 if model.layout.name == "numeric" else 1.0], dtype=np.float64))
    nn.save_checkpoint(path, params)


def load_ki_checkpoint(path: str) -> KiModel:
    loaded = nn.load_checkpoint(path)
    layout = numeric_layout() if float(loaded["meta.layout"].data[0]) == 0.0 \
        else qwerty36_layout()
    lambda_ = float(loaded["meta.lambda"].data[0])
    params = nn.ParamStore()
    for name, t in loaded.items():
        if not name.startswith("meta."):
            params.add(name, t.data)
    return KiModel(layout=layout, params=params, lambda_=lambda_)
