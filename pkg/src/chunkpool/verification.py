"""Built-in finite-difference gradient suite behind ``chunkpool grad-check``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .aggregation import KINDS, AggregatorConfig, lstm_cell
from .autodiff import Tensor, grad_check
from .chunker import ChunkingConfig, chunk_document
from .classifier import ClassifierConfig, LabelSpace
from .encoder import EncoderConfig, encode_chunks, encoder_layer, init_layer, multi_head_self_attention, scope
from .model import DocumentClassifier, ModelConfig
from .tokenizer import TokenSequence, build_vocab

TOLERANCE = 1e-4
COORDS_PER_TENSOR = 12


@dataclass(frozen=True)
class CheckResult:
    component: str
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < TOLERANCE)


def _projector(seed: int) -> Callable[[Tensor], Tensor]:
    """Scalarise an output with a fixed random weighting so every entry matters."""
    cache: dict[tuple[int, ...], np.ndarray] = {}

    def project(t: Tensor) -> Tensor:
        if t.shape not in cache:
            cache[t.shape] = np.random.default_rng(seed).uniform(-1.0, 1.0, t.shape)
        return ad.tsum(ad.mul(t, Tensor(cache[t.shape])))

    return project


def _op_checks(rng: np.random.Generator) -> list[CheckResult]:
    def u(*shape):
        return rng.uniform(-2.0, 2.0, shape)

    w = _projector(7)
    a34, w42, r12 = Tensor(u(3, 4)), Tensor(u(4, 2)), Tensor(u(1, 2))
    mask = np.array([[1, 1, 0, 1], [1, 0, 0, 0], [1, 1, 1, 1]])
    gamma, beta = Tensor(u(4)), Tensor(u(4))
    targets = rng.integers(0, 2, 6).astype(float)
    cell = {"w": Tensor(u(3, 12) / 2), "u": Tensor(u(3, 12) / 2), "b": Tensor(u(12) / 2)}
    h0, c0 = Tensor(u(3)), Tensor(u(3))

    def cell_out(x, h, c):
        return ad.concat(list(lstm_cell(x, h, c, cell)), axis=0)

    cases: list[tuple[str, Callable[[Tensor], Tensor], np.ndarray]] = [
        ("matmul[a]", lambda x: w(ad.matmul(x, w42)), u(3, 4)),
        ("matmul[b]", lambda x: w(ad.matmul(a34, x)), u(4, 2)),
        ("add[row broadcast]", lambda x: w(ad.add(a34, x)), u(4)),
        ("sub", lambda x: w(ad.sub(x, a34)), u(3, 4)),
        ("mul", lambda x: w(ad.mul(x, a34)), u(3, 4)),
        ("gelu", lambda x: w(ad.gelu(x)), u(3, 4)),
        ("tanh", lambda x: w(ad.tanh(x)), u(3, 4)),
        ("sigmoid", lambda x: w(ad.sigmoid(x)), u(3, 4)),
        ("exp", lambda x: w(ad.exp(x)), u(3, 4)),
        ("log", lambda x: w(ad.log(x)), rng.uniform(0.5, 2.0, (3, 4))),
        ("softmax_masked", lambda x: w(ad.softmax_masked(x, mask)), u(3, 4)),
        ("layer_norm[x]", lambda x: w(ad.layer_norm(x, gamma, beta)), u(3, 4)),
        ("layer_norm[gamma]", lambda x: w(ad.layer_norm(a34, x, beta)), u(4)),
        ("layer_norm[beta]", lambda x: w(ad.layer_norm(a34, gamma, x)), u(4)),
        ("embedding_lookup", lambda x: w(ad.embedding_lookup(x, [0, 2, 0])), u(5, 3)),
        ("reduce[mean]", lambda x: w(ad.reduce("mean", x)), u(3, 4)),
        ("reduce[max]", lambda x: w(ad.reduce("max", x)), u(3, 4)),
        ("concat_rows", lambda x: w(ad.concat_rows([x, r12])), u(1, 2)),
        ("dropout[train]", lambda x: w(ad.dropout(x, 0.1, "train", np.random.default_rng(3))), u(3, 4)),
        ("bce_loss", lambda x: ad.bce_loss(x, targets), rng.uniform(0.05, 0.95, 6)),
        ("lstm_cell[x]", lambda x: w(cell_out(x, h0, c0)), u(3)),
        ("lstm_cell[h]", lambda x: w(cell_out(h0, x, c0)), u(3)),
        ("lstm_cell[c]", lambda x: w(cell_out(h0, c0, x)), u(3)),
        ("backward[shared input]", lambda x: w(ad.matmul(x, ad.transpose(x, (1, 0)))), u(3, 4)),
    ]
    return [CheckResult(name, grad_check(f, x0)) for name, f, x0 in cases]


def _layer_checks(rng: np.random.Generator) -> list[CheckResult]:
    d, heads = 8, 2
    # weights scaled up from the 0.02 init so attention is far from uniform
    params = {k: Tensor(v * 25.0 if v.ndim == 2 else v)
              for k, v in scope(init_layer("l", d, 4 * d, rng), "l").items()}
    x0 = rng.uniform(-2.0, 2.0, (4, d))
    mask = np.array([1, 1, 1, 0])
    w = _projector(11)
    return [
        CheckResult("multi_head_self_attention",
                    grad_check(lambda x: w(multi_head_self_attention(x, mask, params, heads)), x0)),
        CheckResult("encoder_layer", grad_check(lambda x: w(encoder_layer(x, mask, params, heads)), x0)),
    ]


def tiny_model(kind: str, seed: int = 0) -> tuple[DocumentClassifier, list]:
    """Two encoder layers, d=16, ℓ=8 (6 content tokens), plus three documents of 3, 1 and 2 chunks."""
    vocab = build_vocab([f"t{i}" for i in range(12)])
    cfg = ModelConfig(
        ChunkingConfig(content_len=6),
        EncoderConfig(len(vocab), hidden=16, n_layers=2, n_heads=2, max_positions=8, dropout_p=0.0),
        AggregatorConfig(kind=kind, max_chunks=3 if kind == "identity" else None, dropout_p=0.0),
        LabelSpace(("a", "b", "c")),
        ClassifierConfig(dropout_p=0.0),
    )
    model = DocumentClassifier.build(cfg, vocab, seed)
    for p in model.params.values():
        if p.tensor.ndim == 2 and not p.name.startswith(("head", "agg.lstm")):
            p.tensor.data = p.tensor.data * 10.0
    rng = np.random.default_rng(seed + 1)
    docs = [chunk_document(TokenSequence(tuple(int(t) for t in rng.integers(4, len(vocab), n))), cfg.chunking, vocab)
            for n in (15, 4, 9)]
    return model, docs


def check_parameters(model: DocumentClassifier, loss_fn: Callable[[], Tensor], names,
                     rng: np.random.Generator, per_tensor: int = COORDS_PER_TENSOR) -> float:
    """Max relative error over a random subset of coordinates of each named parameter."""
    worst = 0.0
    for name in names:
        param = model.params[name]
        original = param.tensor

        def f(t: Tensor) -> Tensor:
            param.tensor = t
            return loss_fn()

        coords = None if original.size <= per_tensor else rng.choice(original.size, per_tensor, replace=False)
        try:
            worst = max(worst, grad_check(f, original.data, coords=coords))
        finally:
            param.tensor = original
    model.zero_grad()
    return worst


def _model_checks(rng: np.random.Generator) -> list[CheckResult]:
    targets = np.array([[1.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    model, docs = tiny_model("mean")
    ids = np.concatenate([doc.ids for doc in docs])
    mask = np.concatenate([doc.mask for doc in docs])
    w = _projector(13)
    encoder_names = [n for n in model.params if n.startswith(("embeddings", "encoder"))]
    results = [CheckResult(
        "encoder[L=2, d=16, l=8]",
        check_parameters(model, lambda: w(encode_chunks(ids, mask, model.tensors, model.config.encoder)),
                         encoder_names, rng))]
    for kind in KINDS:
        model, docs = tiny_model(kind)
        names = [n for n in model.params if not n.startswith(("embeddings", "encoder.layer1."))]
        err = check_parameters(model, lambda m=model, ds=docs: ad.bce_loss(m.forward(ds, "eval"), targets),
                               names, rng)
        results.append(CheckResult(f"aggregator[{kind}]+head", err))
    return results


def run_grad_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return _op_checks(rng) + _layer_checks(rng) + _model_checks(rng)


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.component) for r in results)
    lines = [f"{'component':<{width}}  max_rel_error  status"]
    for r in results:
        lines.append(f"{r.component:<{width}}  {r.max_rel_error:13.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
