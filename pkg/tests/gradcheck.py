"""Central finite-difference oracle, independent of the backward pass."""

import numpy as np

from datlab import autodiff as ad


def numeric_grad(f, leaves, h=1e-5):
    """d f / d leaf by central differences; ``f`` rebuilds the graph from leaf values."""
    grads = []
    for leaf in leaves:
        g = np.zeros_like(leaf.value)
        it = np.nditer(leaf.value, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = leaf.value[idx]
            leaf.value[idx] = orig + h
            plus = np.asarray(f().value).item()
            leaf.value[idx] = orig - h
            minus = np.asarray(f().value).item()
            leaf.value[idx] = orig
            g[idx] = (plus - minus) / (2 * h)
        grads.append(g)
    return grads


def analytic_grad(f, leaves):
    ad.zero_grad(leaves)
    ad.backward(f())
    return [leaf.grad.copy() for leaf in leaves]


def rel_error(a, b):
    """Elementwise |a-b| / (|a|+|b|), with the denominator floored at 1e-4."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1e-4, np.abs(a) + np.abs(b))))


def max_rel_error(f, leaves, h=1e-5, fd_scale=1.0):
    """``fd_scale`` multiplies the numeric gradient before comparison."""
    num = numeric_grad(f, leaves, h)
    ana = analytic_grad(f, leaves)
    return max(rel_error(fd_scale * n, a) for n, a in zip(num, ana))


def _away_from_zero(rng, shape, gap=0.1):
    v = rng.normal(size=shape)
    return np.where(np.abs(v) < gap, np.sign(v + 1e-12) * gap, v)


def _case(rng, m, n):
    """Random leaves and a graph builder for every differentiable op."""
    k = int(rng.integers(1, 5))
    cases = {}

    a, b = ad.Node(rng.normal(size=(m, k))), ad.Node(rng.normal(size=(k, n)))
    cases["matmul"] = ((a, b), lambda a=a, b=b: ad.matmul(a, b))
    a, b = ad.Node(rng.normal(size=(m, n))), ad.Node(rng.normal(size=(m, n)))
    cases["add"] = ((a, b), lambda a=a, b=b: ad.add(a, b))
    a, b = ad.Node(rng.normal(size=(m, n))), ad.Node(rng.normal(size=(m, n)))
    cases["mul"] = ((a, b), lambda a=a, b=b: ad.mul(a, b))
    a, b = ad.Node(rng.normal(size=(m, n))), ad.Node(rng.normal(size=n))
    cases["bias_add"] = ((a, b), lambda a=a, b=b: ad.bias_add(a, b))
    a = ad.Node(rng.normal(size=(m, n)))
    c = float(rng.normal())
    cases["scale"] = ((a,), lambda a=a: ad.scale(a, c))
    a = ad.Node(rng.normal(size=(m, n)))
    cases["tanh"] = ((a,), lambda a=a: ad.tanh(a))
    a = ad.Node(_away_from_zero(rng, (m, n)))
    cases["relu"] = ((a,), lambda a=a: ad.relu(a))
    a = ad.Node(rng.uniform(0.2, 3.0, size=(m, n)))
    cases["log"] = ((a,), lambda a=a: ad.log(a))
    a, b = ad.Node(rng.normal(size=(m, n))), ad.Node(rng.normal(size=(m, k)))
    cases["concat_cols"] = ((a, b), lambda a=a, b=b: ad.concat_cols(a, b))
    a = ad.Node(rng.normal(size=(m, n)))
    cases["sum"] = ((a,), lambda a=a: ad.sum_all(a))
    a = ad.Node(rng.normal(size=(m, n)))
    cases["mean"] = ((a,), lambda a=a: ad.mean(a))
    a = ad.Node(rng.normal(size=(m, n)))
    cases["softmax_rows"] = ((a,), lambda a=a: ad.softmax_rows(a))
    a = ad.Node(rng.normal(size=(m, n)))
    t = rng.dirichlet(np.ones(n), size=m)
    cases["cross_entropy_soft"] = ((a,), lambda a=a: ad.cross_entropy_soft(ad.softmax_rows(a), t))
    a = ad.Node(rng.normal(size=(m, n)))
    y = rng.integers(n, size=m)
    cases["cross_entropy_hard"] = ((a,), lambda a=a: ad.cross_entropy_hard(ad.softmax_rows(a), y))
    a = ad.Node(rng.normal(size=(m, n)))
    lam = float(rng.uniform(0, 2))
    cases["grad_reverse"] = ((a,), lambda a=a: ad.grad_reverse(a, lam))
    # reversal is identity forward, so its backward must equal -lam times the numeric gradient
    scales = {op: 1.0 for op in cases}
    scales["grad_reverse"] = -lam
    return cases, scales


OPS = ("matmul", "add", "mul", "bias_add", "scale", "tanh", "relu", "log", "concat_cols", "sum",
       "mean", "softmax_rows", "cross_entropy_soft", "cross_entropy_hard", "grad_reverse")


def check_op(op, seed):
    """Relative error of the analytic vs numeric gradient for ``op`` on a random shape."""
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    if op.startswith("cross_entropy") or op == "softmax_rows":
        n = max(n, 2)
    cases, scales = _case(rng, m, n)
    leaves, build = cases[op]
    proj_rng = np.random.default_rng(seed + 10_000)
    w_cache = {}

    def f():
        out = build()
        if "w" not in w_cache:
            w_cache["w"] = proj_rng.normal(size=out.shape)
        if out.value.size == 1:
            return out
        return ad.sum_all(ad.mul(out, ad.Node(w_cache["w"], op="const")))

    return max_rel_error(f, list(leaves), fd_scale=scales[op])
