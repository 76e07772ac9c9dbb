import numpy as np
import pytest

from dumkit.dum import GroupBatch, LossConfig, VarianceNet, dum_loss


def central_fd(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """Max entrywise |a - n| / max(|a|, |n|, floor).

    Some entries are exactly zero (e.g. ``b3``: a shared log-variance shift
    leaves the fused means unchanged), and there central differences at
    h=1e-5 return pure rounding noise of order eps * |loss| / h, a few 1e-10.
    The floor keeps that noise from reading as a large relative error.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def loss_grad_error(net: VarianceNet, batch: GroupBatch, cfg: LossConfig, h: float = 1e-5) -> float:
    net.zero_grad()
    dum_loss(batch, net, cfg)
    analytic = {k: p.grad.copy() for k, p in net.params.items()}
    worst = 0.0
    for name, p in net.params.items():
        numeric = central_fd(lambda: dum_loss(batch, net, cfg), p.value, h)
        worst = max(worst, rel_err(analytic[name], numeric))
    return worst


def random_net(d=4, h=8, seed=0) -> VarianceNet:
    return VarianceNet.init(d, h, np.random.default_rng(seed), zero_last=False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
