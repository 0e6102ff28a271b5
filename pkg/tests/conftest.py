import numpy as np
import pytest

from voxsyn.grid import BBox, VoxelGrid, quantize_features


def random_features(rng, dims, channels=4):
    """Quantized channels-last volume: geometry in [-1, 1], appearance norm <= 2."""
    g = np.clip(rng.normal(size=dims), -1, 1)
    a = rng.normal(size=dims + (channels - 1,))
    a *= np.minimum(1.0, 2.0 / np.linalg.norm(a, axis=-1, keepdims=True))
    return quantize_features(np.concatenate([g[..., None], a], axis=-1))


def brute_force_nnf(qf, kf, w_a, alpha, channels=4):
    """Loop over queries, direct squared differences to every key; smallest key index wins ties."""
    n_g = qf.shape[1] // channels
    D = np.empty((len(qf), len(kf)))
    for i in range(len(qf)):
        d = (kf - qf[i]) ** 2
        D[i] = w_a * d[:, n_g:].sum(axis=1) + (1.0 - w_a) * d[:, :n_g].sum(axis=1)
    if alpha is not None:
        D = D / (alpha + D.min(axis=0))
    out = np.empty(len(qf), dtype=np.int64)
    for i in range(len(qf)):
        best, arg = np.inf, -1
        for j in range(len(kf)):
            if D[i, j] < best:
                best, arg = D[i, j], j
        out[i] = arg
    return out, D


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def constant_grid(dims, density=1.0, sh_value=0.0):
    return VoxelGrid(np.full(dims, density), np.full(dims + (27,), sh_value), BBox.for_dims(dims))


ACCEPTANCE_LINES = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Print and keep one PASS/FAIL line per acceptance criterion."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
