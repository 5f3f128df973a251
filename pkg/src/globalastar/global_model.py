"""Recursive global scorer: BiLSTM over words, tree-LSTM units over subtrees.

The network is grown one unit at a time as the search explores subtrees, so
that every explored node owns exactly one recurrent unit and one score head.
Reverse-mode gradients are taken over that DAG after the search.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from .grammar import RuleKind

FORMAT_VERSION = 1
UNK = "<unk>"
RULES = tuple(k.value for k in RuleKind)


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelDims:
    word: int = 50
    category: int = 16
    hidden: int = 64
    # "bilstm": leaves read the sentence encoder; "none": delexicalized leaves
    leaf_input: str = "bilstm"


def log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def score_global(h, W) -> float:
    """log(sigmoid(W . h)); strictly negative for finite input."""
    return float(log_sigmoid(float(np.dot(W, h))))


class LatentState:
    __slots__ = ("c", "h")

    def __init__(self, c, h):
        self.c = c
        self.h = h


def _block_shapes(dims: ModelDims, n_words: int, n_cats: int) -> dict:
    H, dw, dc = dims.hidden, dims.word, dims.category
    shapes = {"word_emb": (n_words, dw), "cat_emb": (n_cats, dc)}
    for d in ("fwd", "bwd"):
        shapes[f"{d}.W_i"] = (H, 2 * H + dw)
        shapes[f"{d}.b_i"] = (H,)
        shapes[f"{d}.W_c"] = (H, H + dw)
        shapes[f"{d}.b_c"] = (H,)
        shapes[f"{d}.W_o"] = (H, 2 * H + dw)
        shapes[f"{d}.b_o"] = (H,)
        shapes[f"{d}.c0"] = (H,)
        shapes[f"{d}.h0"] = (H,)
    for r in RULES:
        shapes[f"tree.{r}.W_i"] = (H, 4 * H + dc)
        shapes[f"tree.{r}.b_i"] = (H,)
        shapes[f"tree.{r}.W_f"] = (H, 4 * H + dc)
        shapes[f"tree.{r}.b_f"] = (H,)
        shapes[f"tree.{r}.W_c"] = (H, 2 * H + dc)
        shapes[f"tree.{r}.b_c"] = (H,)
        shapes[f"tree.{r}.W_o"] = (H, 3 * H + dc)
        shapes[f"tree.{r}.b_o"] = (H,)
    shapes["unary.c"] = (H,)
    shapes["unary.h"] = (H,)
    shapes["score.W"] = (H,)
    return shapes


class ParameterStore:
    """All trainable tensors of the global model plus the embedding vocabularies."""

    def __init__(self, dims: ModelDims, words, categories, tensors: dict):
        self.dims = dims
        self.words = list(words)
        self.categories = list(categories)
        self.word_index = {w: k for k, w in enumerate(self.words)}
        self.cat_index = {c: k for k, c in enumerate(self.categories)}
        self.tensors = tensors
        self.validate()

    @classmethod
    def initialize(cls, words=(), categories=(), dims: ModelDims = ModelDims(), seed: int = 0):
        words = [UNK] + sorted(set(words) - {UNK})
        categories = [UNK] + sorted({str(c) for c in categories} - {UNK})
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in _block_shapes(dims, len(words), len(categories)).items():
            if name in ("word_emb", "cat_emb"):
                tensors[name] = rng.uniform(-0.1, 0.1, size=shape)
            elif name == "score.W":
                limit = math.sqrt(6.0 / (shape[0] + 1))
                tensors[name] = rng.uniform(-limit, limit, size=shape)
            elif ".W_" in name:
                limit = math.sqrt(6.0 / (shape[0] + shape[1]))
                tensors[name] = rng.uniform(-limit, limit, size=shape)
            else:
                tensors[name] = np.zeros(shape)
        return cls(dims, words, categories, tensors)

    def validate(self) -> None:
        shapes = _block_shapes(self.dims, len(self.words), len(self.categories))
        if set(shapes) != set(self.tensors):
            missing = sorted(set(shapes) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(shapes))
            raise ModelConfigError(f"parameter blocks mismatch: missing {missing}, unexpected {extra}")
        for name, shape in shapes.items():
            t = self.tensors[name]
            if t.shape != shape:
                raise ModelConfigError(f"{name}: expected shape {shape}, got {t.shape}")
            if not np.all(np.isfinite(t)):
                raise ModelConfigError(f"{name}: non-finite values")

    def __getitem__(self, name: str):
        return self.tensors[name]

    def copy(self) -> "ParameterStore":
        return ParameterStore(self.dims, self.words, self.categories,
                              {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def word_id(self, word: str) -> int:
        return self.word_index.get(word, 0)

    def cat_id(self, category) -> int:
        return self.cat_index.get(str(category), 0)

    # -- serialization ------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "dims": asdict(self.dims),
            "vocab": {"words": self.words, "categories": self.categories},
            "tensors": {k: v.tolist() for k, v in self.tensors.items()},
        }

    @classmethod
    def from_json(cls, data: dict) -> "ParameterStore":
        if data.get("format_version") != FORMAT_VERSION:
            raise ModelConfigError(f"unsupported model format {data.get('format_version')!r}")
        dims = ModelDims(**data["dims"])
        tensors = {k: np.asarray(v, dtype=np.float64) for k, v in data["tensors"].items()}
        return cls(dims, data["vocab"]["words"], data["vocab"]["categories"], tensors)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def load(cls, path) -> "ParameterStore":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))


# ---------------------------------------------------------------------------
# computation graph


class _ChainStep:
    __slots__ = ("d", "prev", "out", "word", "x", "mask", "i", "ct", "o", "inp_i", "inp_c", "inp_o")


class _TreeUnit:
    __slots__ = ("rule", "cat", "left", "right", "out", "u", "i", "f", "ct", "o", "clr", "inp_c", "inp_o")


class ComputationGraph:
    """Append-only record of chain steps, tree units and score heads for one sentence.

    States are addressed by integer ids. Boundary and unary embeddings are
    parameter states; chain steps and tree units produce the rest.
    """

    def __init__(self, params: ParameterStore, words, dropout_mask=None):
        self.params = params
        self.words = list(words)
        self.c: list = []
        self.h: list = []
        self.records: list = []
        self.param_states: dict = {}
        self.heads: dict = {}
        self.n_units = 0
        n = len(self.words)
        H = params.dims.hidden
        self.word_ids = [params.word_id(w) for w in self.words]
        self.dropout_mask = dropout_mask
        self.fwd = [None] * n
        self.bwd = [None] * n
        self.unary_state = self._param_state("unary")
        self._zero_state = None
        if params.dims.leaf_input == "none":
            self._zero_state = self._new_state(np.zeros(H), np.zeros(H))
            return
        prev = self._param_state("fwd")
        for t in range(n):
            prev = self.fwd[t] = self._chain_step("fwd", prev, t)
        prev = self._param_state("bwd")
        for t in reversed(range(n)):
            prev = self.bwd[t] = self._chain_step("bwd", prev, t)

    def _new_state(self, c, h) -> int:
        self.c.append(c)
        self.h.append(h)
        return len(self.c) - 1

    def _param_state(self, prefix: str) -> int:
        if prefix == "unary":
            sid = self._new_state(self.params["unary.c"], self.params["unary.h"])
        else:
            sid = self._new_state(self.params[f"{prefix}.c0"], self.params[f"{prefix}.h0"])
        self.param_states[sid] = prefix
        return sid

    def state(self, sid: int) -> LatentState:
        return LatentState(self.c[sid], self.h[sid])

    def _chain_step(self, d: str, prev: int, t: int) -> int:
        P = self.params
        r = _ChainStep()
        r.d, r.prev, r.word = d, prev, self.word_ids[t]
        x = P["word_emb"][r.word]
        if self.dropout_mask is not None:
            r.mask = self.dropout_mask[t]
            x = x * r.mask
        else:
            r.mask = None
        r.x = x
        c_prev, h_prev = self.c[prev], self.h[prev]
        r.inp_i = np.concatenate([c_prev, h_prev, x])
        r.i = expit(P[f"{d}.W_i"] @ r.inp_i + P[f"{d}.b_i"])
        r.inp_c = np.concatenate([h_prev, x])
        r.ct = np.tanh(P[f"{d}.W_c"] @ r.inp_c + P[f"{d}.b_c"])
        r.inp_o = np.concatenate([r.ct, h_prev, x])
        r.o = expit(P[f"{d}.W_o"] @ r.inp_o + P[f"{d}.b_o"])
        c = r.i * r.ct + (1.0 - r.i) * c_prev
        h = r.o * np.tanh(c)
        r.out = self._new_state(c, h)
        self.records.append(r)
        return r.out

    def leaf_state(self, token: int):
        """(left, right) state ids read by a leaf: forward and backward chain states."""
        if not 0 <= token < len(self.words):
            raise IndexError(f"token {token} out of range for a {len(self.words)}-word sentence")
        if self._zero_state is not None:
            return self._zero_state, self._zero_state
        return self.fwd[token], self.bwd[token]

    def tree_unit(self, rule: RuleKind, left: int, right: int, category) -> int:
        P = self.params
        pre = f"tree.{rule.value}"
        if f"{pre}.W_i" not in P.tensors:
            raise ModelConfigError(f"no parameters for rule {rule.value}")
        r = _TreeUnit()
        r.rule, r.cat, r.left, r.right = rule.value, P.cat_id(category), left, right
        cl, hl, cr, hr = self.c[left], self.h[left], self.c[right], self.h[right]
        xy = P["cat_emb"][r.cat]
        r.u = np.concatenate([cl, hl, cr, hr, xy])
        r.i = expit(P[f"{pre}.W_i"] @ r.u + P[f"{pre}.b_i"])
        r.f = expit(P[f"{pre}.W_f"] @ r.u + P[f"{pre}.b_f"])
        r.inp_c = np.concatenate([hl, hr, xy])
        r.ct = np.tanh(P[f"{pre}.W_c"] @ r.inp_c + P[f"{pre}.b_c"])
        r.inp_o = np.concatenate([r.ct, hl, hr, xy])
        r.o = expit(P[f"{pre}.W_o"] @ r.inp_o + P[f"{pre}.b_o"])
        r.clr = r.f * cl + (1.0 - r.f) * cr
        c = r.i * r.ct + (1.0 - r.i) * r.clr
        h = r.o * np.tanh(c)
        r.out = self._new_state(c, h)
        self.records.append(r)
        self.n_units += 1
        return r.out

    def encode_node(self, node) -> int:
        """Build (once) the unit for ``node``; its children must already be encoded."""
        if node.state is not None:
            return node.state
        if node.is_leaf:
            left, right = self.leaf_state(node.span.start)
        elif len(node.children) == 1:
            left, right = self.unary_state, self._child(node.children[0])
        else:
            left, right = self._child(node.children[0]), self._child(node.children[1])
        node.state = self.tree_unit(node.rule.kind, left, right, node.category)
        return node.state

    @staticmethod
    def _child(child) -> int:
        if child.state is None:
            raise RuntimeError(f"child {child!r} has not been encoded")
        return child.state

    def score(self, node) -> float:
        """Global score of the edge that produces ``node``; records a score head."""
        sid = self.encode_node(node)
        z = float(np.dot(self.params["score.W"], self.h[sid]))
        self.heads[node] = (sid, z)
        return float(log_sigmoid(z))

    # -- reverse mode -------------------------------------------------------

    def backward(self, seeds) -> dict:
        """Gradient of sum_n w_n * s_global(n) over (node, w) pairs in ``seeds``."""
        P = self.params
        grads = P.zeros_like()
        dc: dict = {}
        dh: dict = {}
        Wscore = P["score.W"]
        items = seeds.items() if hasattr(seeds, "items") else seeds
        for node, w in items:
            if w == 0:
                continue
            if node not in self.heads:
                raise RuntimeError(f"no recorded score for {node!r}")
            sid, z = self.heads[node]
            k = w * float(expit(-z))
            grads["score.W"] += k * self.h[sid]
            _acc(dh, sid, k * Wscore)

        for r in reversed(self.records):
            if r.out not in dc and r.out not in dh:
                continue
            H = len(r.i)
            g_c = dc.pop(r.out, None)
            g_h = dh.pop(r.out, None)
            c = self.c[r.out]
            tc = np.tanh(c)
            dcy = np.zeros(H) if g_c is None else g_c.copy()
            if g_h is not None:
                do = g_h * tc
                dcy += g_h * r.o * (1.0 - tc * tc)
            else:
                do = np.zeros(H)
            dzo = do * r.o * (1.0 - r.o)
            if isinstance(r, _TreeUnit):
                self._tree_backward(r, dcy, dzo, grads, dc, dh)
            else:
                self._chain_backward(r, dcy, dzo, grads, dc, dh)

        for sid, prefix in self.param_states.items():
            if sid in dc:
                grads[f"{prefix}.c" if prefix == "unary" else f"{prefix}.c0"] += dc[sid]
            if sid in dh:
                grads[f"{prefix}.h" if prefix == "unary" else f"{prefix}.h0"] += dh[sid]
        return grads

    def _tree_backward(self, r, dcy, dzo, grads, dc, dh):
        P = self.params
        pre = f"tree.{r.rule}"
        H = len(r.i)
        cl, cr = self.c[r.left], self.c[r.right]
        # o depends on [ct, hl, hr, xy]
        grads[f"{pre}.W_o"] += np.outer(dzo, r.inp_o)
        grads[f"{pre}.b_o"] += dzo
        d_inp_o = P[f"{pre}.W_o"].T @ dzo
        dct = dcy * r.i + d_inp_o[:H]
        di = dcy * (r.ct - r.clr)
        dclr = dcy * (1.0 - r.i)
        df = dclr * (cl - cr)
        dcl = dclr * r.f
        dcr = dclr * (1.0 - r.f)
        dzc = dct * (1.0 - r.ct * r.ct)
        grads[f"{pre}.W_c"] += np.outer(dzc, r.inp_c)
        grads[f"{pre}.b_c"] += dzc
        d_inp_c = P[f"{pre}.W_c"].T @ dzc
        dzi = di * r.i * (1.0 - r.i)
        dzf = df * r.f * (1.0 - r.f)
        grads[f"{pre}.W_i"] += np.outer(dzi, r.u)
        grads[f"{pre}.b_i"] += dzi
        grads[f"{pre}.W_f"] += np.outer(dzf, r.u)
        grads[f"{pre}.b_f"] += dzf
        du = P[f"{pre}.W_i"].T @ dzi + P[f"{pre}.W_f"].T @ dzf
        dcl = dcl + du[:H]
        dhl = du[H:2 * H] + d_inp_c[:H] + d_inp_o[H:2 * H]
        dcr = dcr + du[2 * H:3 * H]
        dhr = du[3 * H:4 * H] + d_inp_c[H:2 * H] + d_inp_o[2 * H:3 * H]
        dxy = du[4 * H:] + d_inp_c[2 * H:] + d_inp_o[3 * H:]
        grads["cat_emb"][r.cat] += dxy
        _acc(dc, r.left, dcl)
        _acc(dh, r.left, dhl)
        _acc(dc, r.right, dcr)
        _acc(dh, r.right, dhr)

    def _chain_backward(self, r, dcy, dzo, grads, dc, dh):
        P = self.params
        d = r.d
        H = len(r.i)
        c_prev = self.c[r.prev]
        grads[f"{d}.W_o"] += np.outer(dzo, r.inp_o)
        grads[f"{d}.b_o"] += dzo
        d_inp_o = P[f"{d}.W_o"].T @ dzo
        dct = dcy * r.i + d_inp_o[:H]
        di = dcy * (r.ct - c_prev)
        dcp = dcy * (1.0 - r.i)
        dzc = dct * (1.0 - r.ct * r.ct)
        grads[f"{d}.W_c"] += np.outer(dzc, r.inp_c)
        grads[f"{d}.b_c"] += dzc
        d_inp_c = P[f"{d}.W_c"].T @ dzc
        dzi = di * r.i * (1.0 - r.i)
        grads[f"{d}.W_i"] += np.outer(dzi, r.inp_i)
        grads[f"{d}.b_i"] += dzi
        d_inp_i = P[f"{d}.W_i"].T @ dzi
        dcp = dcp + d_inp_i[:H]
        dhp = d_inp_i[H:2 * H] + d_inp_c[:H] + d_inp_o[H:2 * H]
        dx = d_inp_i[2 * H:] + d_inp_c[H:] + d_inp_o[2 * H:]
        if r.mask is not None:
            dx = dx * r.mask
        grads["word_emb"][r.word] += dx
        _acc(dc, r.prev, dcp)
        _acc(dh, r.prev, dhp)


def _acc(store: dict, key, value) -> None:
    if key in store:
        store[key] = store[key] + value
    else:
        store[key] = value


def dropout_mask(rng, n_words: int, dim: int, p: float):
    """Inverted-dropout mask, one row per word, shared by both chains."""
    if p <= 0:
        return None
    keep = rng.random((n_words, dim)) >= p
    return keep / (1.0 - p)


class GlobalModel:
    """Thin handle bundling parameters with graph construction."""

    def __init__(self, params: ParameterStore):
        self.params = params

    def new_graph(self, words, dropout_mask=None) -> ComputationGraph:
        return ComputationGraph(self.params, words, dropout_mask)
