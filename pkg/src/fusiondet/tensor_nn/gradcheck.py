"""Central finite-difference gradient checks in 64-bit."""
from __future__ import annotations

import numpy as np


def relative_error(a, b, floor: float = 1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numeric_grad(f, arr, index, eps):
    old = arr[index]
    arr[index] = old + eps
    fp = f()
    arr[index] = old - eps
    fm = f()
    arr[index] = old
    return (fp - fm) / (2 * eps)


def roundoff_bound(fp, fm, eps) -> float:
    """Largest central difference that rounding alone can produce."""
    return 4 * np.finfo(np.float64).eps * max(abs(fp), abs(fm), 1.0) / (2 * eps)


def entry_error(analytic, numeric, bound) -> float:
    # a relative error is undefined for a structurally zero gradient; such
    # entries pass if the difference quotient is pure rounding
    if analytic == 0.0:
        return 0.0 if abs(numeric) <= bound else 1.0
    return float(relative_error(analytic, numeric))


def _same_pattern(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(f, tensors, analytic, eps: float = 1e-6, samples: int | None = 20, rng=None, pattern=None):
    """Compare analytic gradients against central differences.

    ``f`` evaluates the scalar loss from the current contents of
    ``tensors`` (a ``{name: float64 array}`` dict, perturbed in place).
    ``samples`` limits the number of checked entries per tensor.
    ``pattern``, if given, returns the list of activation masks / argmax
    maps left by the last ``f`` call; entries whose perturbation changes
    it straddle a kink, where central differences are meaningless, and
    are replaced by other entries.
    Returns ``{name: worst relative error}``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    base = None
    if pattern is not None:
        f()
        base = [np.array(m, copy=True) for m in pattern()]
    report = {}
    for name, arr in tensors.items():
        if arr.dtype != np.float64:
            raise TypeError(f"{name}: gradient checks require float64 tensors")
        n = arr.size
        want = n if samples is None else min(samples, n)
        order = rng.permutation(n) if want < n else np.arange(n)
        worst = 0.0
        checked = 0
        ga = np.asarray(analytic[name], dtype=np.float64)
        for flat in order:
            if checked == want:
                break
            idx = np.unravel_index(flat, arr.shape)
            old = arr[idx]
            arr[idx] = old + eps
            fp = f()
            kink = base is not None and not _same_pattern(pattern(), base)
            arr[idx] = old - eps
            fm = f()
            kink = kink or (base is not None and not _same_pattern(pattern(), base))
            arr[idx] = old
            if kink:
                continue
            num = (fp - fm) / (2 * eps)
            worst = max(worst, entry_error(float(ga[idx]), num, roundoff_bound(fp, fm, eps)))
            checked += 1
        report[name] = worst
    return report
