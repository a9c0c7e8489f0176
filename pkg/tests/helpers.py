import numpy as np


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def reference_projection(p, intr):
    """Straight-line 64-bit evaluation, one point at a time."""
    x, y, z = (float(v) for v in p)
    xn, yn = -x / z, -y / z
    r2 = xn ** 2 + yn ** 2
    k1, k2, k3, k4, k5 = intr.kappa
    f = 1 + k1 * r2 + k2 * r2 ** 2 + k3 * r2 ** 3
    md = np.array([
        f * xn + 2 * k4 * xn * yn + k5 * (r2 + 2 * xn ** 2),
        f * yn + 2 * k5 * xn * yn + k4 * (r2 + 2 * yn ** 2),
        1.0,
    ])
    u, v, w = intr.matrix @ md
    return u / w, v / w


def naive_densify(img, k):
    h, w = img.shape
    half = k // 2
    out = np.full((h, w), np.inf)
    for i in range(h):
        for j in range(w):
            vals = [img[a, b] for a in range(max(0, i - half), min(h, i + half + 1))
                    for b in range(max(0, j - half), min(w, j + half + 1)) if np.isfinite(img[a, b])]
            if vals:
                out[i, j] = sum(float(v) for v in vals) / len(vals)
    return out


ACCEPTANCE_RESULTS = {}


class criterion:
    """Context manager recording a PASS/FAIL line; assertion failures propagate."""

    def __init__(self, number: int, title: str):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        detail = self.detail
        if exc is not None:
            msg = str(exc).splitlines()[0] if str(exc) else exc_type.__name__
            detail = f"{detail}; {msg}" if detail else msg
        ACCEPTANCE_RESULTS[self.number] = (self.title, exc is None, detail)
        return False
