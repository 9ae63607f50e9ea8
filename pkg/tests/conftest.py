import numpy as np
import pytest

from tinyvlm import autodiff as ad
from tinyvlm.encoder import EncoderConfig
from tinyvlm.lm import LMConfig
from tinyvlm.vocab import Vocabulary


def finite_difference(loss_fn, tensors, eps=1e-4):
    """Central finite differences of a scalar loss wrt each tensor's entries."""
    grads = []
    for t in tensors:
        flat = t.data.reshape(-1)
        g = np.empty_like(flat)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            with ad.no_grad():
                up = float(loss_fn().item())
            flat[i] = old - eps
            with ad.no_grad():
                dn = float(loss_fn().item())
            flat[i] = old
            g[i] = (up - dn) / (2 * eps)
        grads.append(g.reshape(t.shape))
    return grads


def max_rel_error(analytic, numeric, floor=1e-12):
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    b = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def check_gradients(loss_fn, tensors, eps=1e-4, tol=1e-6):
    """Assert backprop matches central differences for every tensor."""
    for t in tensors:
        t.zero_grad()
    loss = loss_fn()
    loss.backward()
    numeric = finite_difference(loss_fn, tensors, eps=eps)
    for t, num in zip(tensors, numeric):
        err = max_rel_error(t.grad, num)
        assert err < tol, f"gradient mismatch {err:.3e} (tol {tol:.0e}) for shape {t.shape}"


TINY_ENCODER = EncoderConfig(stem_channels=4, stage_widths=(4, 6),
                             blocks_per_stage=(1, 1), input_size=8)


def tiny_vocab() -> Vocabulary:
    return Vocabulary(["describe", "the", "red", "square", "moves",
                       "right", "what", "color"])


def tiny_lm_config(vocab: Vocabulary) -> LMConfig:
    return LMConfig(d_model=8, n_layers=1, n_heads=2, ffn_dim=16,
                    max_context=40, vocab_size=len(vocab))


@pytest.fixture
def rng():
    return np.random.default_rng(42)
