"""Central finite-difference helpers shared by the gradient tests."""
import numpy as np

STEP = 1e-6


def rel_error(a, b) -> float:
    """Norm-wise relative error ``|a - b| / max(|a| + |b|, tiny)``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    den = np.linalg.norm(a) + np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / den) if den > 1e-300 else 0.0


def numeric_grad(f, x: np.ndarray, idx=None, h: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to entries of ``x`` (modified in place, restored)."""
    flat = x.reshape(-1)
    idx = range(flat.size) if idx is None else idx
    out = []
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def sample_indices(rng, size: int, k: int):
    return np.arange(size) if size <= k else np.sort(rng.choice(size, k, replace=False))
